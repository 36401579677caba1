"""Training: Adam on the networks, proximal gradient on the loading matrices.

One update per batch:

1. forward pass and the smooth part of the bound (no group-lasso term);
2. backward pass on its negation;
3. Adam step on every network parameter;
4. plain gradient ascent step ``W += lr_prox * dL/dW`` on the loadings;
5. column-wise group soft-thresholding of ``W`` with threshold
   ``lr_prox * lam``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore
from .data import LongitudinalDataset, make_batches
from .errors import ContractError, NonFiniteError, TrainingError
from .model import LOADINGS, DlgfaModel, LoadingMatrices, ModelConfig, column_norms
from .objective import LossBreakdown, elbo_terms, group_lasso_penalty

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimConfig:
    lr_adam: float = 1e-3
    lr_prox: float = 1e-4
    lam: float = 0.0
    max_epochs: int = 100
    max_iterations: int | None = None
    batch_size: int = 64
    tol: float = 1e-5
    patience: int = 10
    seed: int = 0
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.lr_adam <= 0 or self.lr_prox <= 0:
            raise ValueError("learning rates must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.max_iterations is not None and self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.tol <= 0 or self.patience < 1:
            raise ValueError("tol must be positive and patience >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


@dataclass
class TrainHistory:
    epochs: list[LossBreakdown] = field(default_factory=list)
    zero_columns: list[int] = field(default_factory=list)
    iterations: int = 0

    def __len__(self) -> int:
        return len(self.epochs)

    def append(self, breakdown: LossBreakdown, zero_columns: int) -> None:
        self.epochs.append(breakdown)
        self.zero_columns.append(int(zero_columns))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "recon", "kl", "penalty", "objective", "zero_columns"])
            for i, (b, z) in enumerate(zip(self.epochs, self.zero_columns), start=1):
                writer.writerow([i, repr(b.recon_loglik), repr(b.kl), repr(b.penalty), repr(b.objective), z])


def adam_step(
    store: ParamStore,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    exclude: tuple[str, ...] = (LOADINGS,),
) -> None:
    """One Adam update that descends the gradients held in ``store.grads``."""
    grads = {}
    for name in store:
        if name in exclude:
            continue
        g = store.grads.get(name)
        if g is None:
            raise ContractError(f"missing gradient for {name!r}")
        grads[name] = g
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p = store[name].data
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def prox_group_columns(W: LoadingMatrices | np.ndarray, threshold: float) -> None:
    """Group soft-thresholding of every column, in place.

    Columns with norm ``<= threshold`` become exact zeros; the rest keep
    their direction and lose ``threshold`` of their norm.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    values = W.values if isinstance(W, LoadingMatrices) else W
    if threshold == 0:
        return
    norms = column_norms(values, axis=-2, keepdims=True)
    keep = norms > threshold
    factor = np.where(keep, (norms - threshold) / np.where(keep, norms, 1.0), 0.0)
    values *= factor
    values[np.broadcast_to(~keep, values.shape)] = 0.0


def count_zero_columns(model: DlgfaModel) -> int:
    return int(model.loadings.zero_columns().sum())


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def train_step(model: DlgfaModel, batch: np.ndarray, noise: np.ndarray, config: OptimConfig, state: AdamState) -> LossBreakdown:
    terms = elbo_terms(batch, model, noise, config.weight_decay)
    breakdown = LossBreakdown(
        recon_loglik=float(terms.recon),
        kl=float(terms.kl),
        penalty=group_lasso_penalty(model.loadings, config.lam),
        log_prior=0.0 if terms.log_prior is None else float(terms.log_prior),
        n_elements=int(batch.size),
    )
    ad.backward(-terms.smooth, model.params)
    adam_step(model.params, state, config.lr_adam, config.beta1, config.beta2, config.adam_eps)
    W = model.params[LOADINGS].data
    W -= config.lr_prox * model.params.grad(LOADINGS)
    prox_group_columns(W, config.lr_prox * config.lam)
    return breakdown


def _mean_breakdown(parts: list[LossBreakdown]) -> LossBreakdown:
    n = len(parts)
    return LossBreakdown(
        recon_loglik=float(np.sum([b.recon_loglik for b in parts]) / n),
        kl=float(np.sum([b.kl for b in parts]) / n),
        penalty=float(np.sum([b.penalty for b in parts]) / n),
        log_prior=float(np.sum([b.log_prior for b in parts]) / n),
        n_elements=int(round(np.sum([b.n_elements for b in parts]) / n)),
    )


def train_epoch(
    model: DlgfaModel,
    dataset: LongitudinalDataset,
    config: OptimConfig,
    state: AdamState,
    epoch: int = 0,
    max_batches: int | None = None,
) -> LossBreakdown:
    """One pass over ``dataset``; returns the mean of the per-batch terms."""
    if dataset.T > model.config.T:
        raise TrainingError(f"dataset has T={dataset.T} but the model was built for T={model.config.T}")
    rng = _epoch_rng(config.seed, epoch)
    batches = make_batches(dataset, config.batch_size, seed=rng)
    if max_batches is not None:
        batches = batches[:max_batches]
    parts = []
    for i, batch in enumerate(batches):
        noise = rng.standard_normal((batch.shape[0], batch.shape[1], model.config.K))
        try:
            breakdown = train_step(model, batch, noise, config, state)
        except NonFiniteError as exc:
            raise TrainingError(f"non-finite values at epoch {epoch + 1}, batch {i + 1}: {exc}") from exc
        if not np.isfinite(breakdown.objective):
            raise TrainingError(f"non-finite objective at epoch {epoch + 1}, batch {i + 1}: {breakdown}")
        parts.append(breakdown)
    if not parts:
        raise TrainingError("dataset produced no batches")
    return _mean_breakdown(parts)


def _rel_change(prev: float, cur: float) -> float:
    if prev == cur:
        return 0.0
    return abs(cur - prev) / max(abs(prev), 1e-12)


def has_converged(history: TrainHistory, tol: float, window: int = 10) -> bool:
    """True when the smooth bound and the penalty have both moved by less
    than ``tol`` (relative) over each of the last ``window`` epochs."""
    if len(history) < window + 1:
        return False
    recent = history.epochs[-(window + 1) :]
    for prev, cur in zip(recent[:-1], recent[1:]):
        if _rel_change(prev.smooth, cur.smooth) >= tol or _rel_change(prev.penalty, cur.penalty) >= tol:
            return False
    return True


def fit(
    dataset: LongitudinalDataset,
    model_config: ModelConfig,
    optim_config: OptimConfig,
    callback: Callable[[int, DlgfaModel, TrainHistory], None] | None = None,
) -> tuple[DlgfaModel, TrainHistory]:
    """Train a freshly initialised model until convergence or a budget runs out.

    ``callback(epoch, model, history)`` runs after every epoch (1-based
    epoch number); the CLI uses it for periodic checkpoints.
    """
    model = DlgfaModel(model_config, seed=optim_config.seed)
    state = AdamState()
    history = TrainHistory()
    n_batches = int(np.ceil(dataset.N / optim_config.batch_size))
    for epoch in range(optim_config.max_epochs):
        max_batches = None
        if optim_config.max_iterations is not None:
            remaining = optim_config.max_iterations - history.iterations
            if remaining <= 0:
                break
            max_batches = min(remaining, n_batches)
        breakdown = train_epoch(model, dataset, optim_config, state, epoch, max_batches)
        history.iterations += n_batches if max_batches is None else max_batches
        history.append(breakdown, count_zero_columns(model))
        log.debug(
            "epoch %d objective %.4f recon %.4f kl %.4f penalty %.4f zero columns %d",
            epoch + 1, breakdown.objective, breakdown.recon_loglik, breakdown.kl,
            breakdown.penalty, history.zero_columns[-1],
        )
        if callback is not None:
            callback(epoch + 1, model, history)
        if has_converged(history, optim_config.tol, optim_config.patience):
            log.info("converged after %d epochs", epoch + 1)
            break
    return model, history
