"""Collapsed evidence lower bound.

Marginalising the Gamma-distributed column scales out of the loading prior
leaves a deterministic group-lasso term, so the bound per batch is

    sum_t [ log p(x_t | z_<=t, x_<t) - KL(q(z_t | .) || p(z_t | .)) ]
        - lam * sum_{t,g,j} ||W[t, g][:, j]||_2

estimated with one reparameterised sample.  The prior over network weights
is improper (a constant) unless ``weight_decay`` is positive, in which case a
zero-mean Gaussian prior with that precision is added.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError
from .model import DlgfaModel, GaussianParams, LoadingMatrices, StepRecord, column_norms

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LossBreakdown:
    """Terms of the bound in nats for one batch (or an average of batches)."""

    recon_loglik: float
    kl: float
    penalty: float
    log_prior: float = 0.0
    n_elements: int = 1

    @property
    def smooth(self) -> float:
        return self.recon_loglik - self.kl + self.log_prior

    @property
    def objective(self) -> float:
        return self.recon_loglik - self.kl - self.penalty + self.log_prior

    @property
    def objective_per_element(self) -> float:
        return self.objective / self.n_elements


def _check(q: GaussianParams, p_or_x) -> None:
    shape = p_or_x.shape if isinstance(p_or_x, Tensor) else p_or_x.mean.shape
    if q.mean.shape != shape:
        raise DimensionError(f"shape mismatch: {q.mean.shape} vs {shape}")


def kl_diag_gaussian(q: GaussianParams, p: GaussianParams) -> Tensor:
    """KL(q || p) for diagonal Gaussians, summed over all elements."""
    _check(q, p)
    ratio = (ad.square(q.scale) + ad.square(q.mean - p.mean)) / (2.0 * ad.square(p.scale))
    return ad.sum(ad.log(p.scale) - ad.log(q.scale) + ratio - 0.5)


def logpdf_diag_gaussian(x, p: GaussianParams) -> Tensor:
    """Log density of ``x`` under a diagonal Gaussian, summed over elements."""
    x = ad.as_tensor(x)
    _check(p, x)
    z = (x - p.mean) / p.scale
    return ad.sum(-HALF_LOG_2PI - ad.log(p.scale) - 0.5 * ad.square(z))


def group_lasso_penalty(W: LoadingMatrices | np.ndarray, lam: float) -> float:
    """``lam`` times the sum of Euclidean column norms over every (t, g, j)."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    values = W.values if isinstance(W, LoadingMatrices) else np.asarray(W)
    return float(lam * np.sum(column_norms(values)))


@dataclass
class ElboTerms:
    """Differentiable pieces of the bound plus per-timestep values."""

    recon: Tensor
    kl: Tensor
    log_prior: Tensor | None
    step_recon: list[float]
    step_kl: list[float]
    records: list[StepRecord]

    @property
    def smooth(self) -> Tensor:
        out = self.recon - self.kl
        return out if self.log_prior is None else out + self.log_prior


def elbo_terms(batch, model: DlgfaModel, noise, weight_decay: float = 0.0) -> ElboTerms:
    batch = np.asarray(batch, dtype=np.float64)
    records = model.forward_sequence(batch, noise)
    recon_parts, kl_parts = [], []
    for t, rec in enumerate(records):
        recon_parts.append(logpdf_diag_gaussian(batch[t], rec.likelihood))
        kl_parts.append(kl_diag_gaussian(rec.posterior, rec.prior))
    recon = recon_parts[0]
    kl = kl_parts[0]
    for r, k in zip(recon_parts[1:], kl_parts[1:]):
        recon = recon + r
        kl = kl + k
    log_prior = None
    if weight_decay > 0:
        total = None
        for name in model.network_param_names():
            term = ad.sum(ad.square(model.params[name]))
            total = term if total is None else total + term
        log_prior = -0.5 * weight_decay * total
    return ElboTerms(
        recon=recon,
        kl=kl,
        log_prior=log_prior,
        step_recon=[float(r) for r in recon_parts],
        step_kl=[float(k) for k in kl_parts],
        records=records,
    )


def collapsed_elbo(batch, model: DlgfaModel, noise, lam: float = 0.0, weight_decay: float = 0.0) -> LossBreakdown:
    """Single-sample estimate of the collapsed bound for a ``(T, B, d)`` batch."""
    terms = elbo_terms(batch, model, noise, weight_decay)
    batch = np.asarray(batch)
    return LossBreakdown(
        recon_loglik=float(terms.recon),
        kl=float(terms.kl),
        penalty=group_lasso_penalty(model.loadings, lam),
        log_prior=0.0 if terms.log_prior is None else float(terms.log_prior),
        n_elements=int(batch.size),
    )
