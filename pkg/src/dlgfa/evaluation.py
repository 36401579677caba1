"""Reconstruction metrics, held-out bound, and loading-matrix reports."""

from __future__ import annotations

import csv
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .autodiff import no_grad
from .data import LongitudinalDataset, SplitSpec, make_batches, split_dataset
from .errors import DataError, DimensionError
from .model import DlgfaModel, ModelConfig
from .objective import elbo_terms
from .optim import OptimConfig, fit

EVAL_BATCH = 256


def _check_compatible(model: DlgfaModel, ds: LongitudinalDataset) -> None:
    if ds.d != model.config.d:
        raise DimensionError(f"dataset has d={ds.d}, model expects d={model.config.d}")
    if ds.T > model.config.T:
        raise DimensionError(f"dataset has T={ds.T}, model supports T<={model.config.T}")


def reconstruct(model: DlgfaModel, dataset: LongitudinalDataset, noise_mode: str = "zero_noise", seed: int = 0) -> np.ndarray:
    """Decoder means for every sequence, shape ``(N, T, d)``."""
    _check_compatible(model, dataset)
    if noise_mode not in ("zero_noise", "sampled"):
        raise ValueError(f"unknown noise_mode {noise_mode!r}")
    rng = np.random.default_rng(seed)
    out = np.empty_like(dataset.sequences)
    K = model.config.K
    with no_grad():
        for start, batch in zip(range(0, dataset.N, EVAL_BATCH), make_batches(dataset, EVAL_BATCH, shuffle=False)):
            T, B, _ = batch.shape
            noise = np.zeros((T, B, K)) if noise_mode == "zero_noise" else rng.standard_normal((T, B, K))
            records = model.forward_sequence(batch, noise)
            for t, rec in enumerate(records):
                out[start : start + B, t] = rec.likelihood.mean.data
    return out


def mse_test(model: DlgfaModel, dataset: LongitudinalDataset, noise_mode: str = "zero_noise", seed: int = 0) -> float:
    """Mean squared reconstruction error over all sequences, timesteps and features.

    ``zero_noise`` decodes the posterior mean; ``sampled`` draws ``z``.
    """
    recon = reconstruct(model, dataset, noise_mode, seed)
    return float(np.mean((recon - dataset.sequences) ** 2))


def test_log_likelihood(model: DlgfaModel, dataset: LongitudinalDataset, num_samples: int = 1, seed: int = 0) -> float:
    """Bound (reconstruction minus KL, no penalty) summed over ``dataset``.

    Averaged over ``num_samples`` independent draws of the latent noise.
    Each sequence gets its own noise stream, so the value does not depend on
    the order of sequences.
    """
    _check_compatible(model, dataset)
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    K = model.config.K
    T = dataset.T
    total = 0.0
    with no_grad():
        for s in range(num_samples):
            noise_all = np.stack(
                [
                    np.random.default_rng([seed, s, _stable_id(sid)]).standard_normal((T, K))
                    for sid in dataset.subject_ids
                ],
                axis=1,
            )
            for start, batch in zip(range(0, dataset.N, EVAL_BATCH), make_batches(dataset, EVAL_BATCH, shuffle=False)):
                noise = noise_all[:, start : start + batch.shape[1]]
                terms = elbo_terms(batch, model, noise)
                total += float(terms.recon) - float(terms.kl)
    return total / num_samples


test_log_likelihood.__test__ = False  # keep pytest from collecting it


def _stable_id(sid: str) -> int:
    # deterministic across processes, unlike hash()
    return int.from_bytes(hashlib.sha256(str(sid).encode("utf-8")).digest()[:8], "little")


# --------------------------------------------------------------------------
# loading-matrix reports


@dataclass(frozen=True)
class SparsityReport:
    """Column norms of ``W`` with shape ``(T, G, K)`` and exact-zero flags."""

    norms: np.ndarray
    zero_flags: np.ndarray
    group_names: tuple[str, ...]

    @property
    def T(self) -> int:
        return self.norms.shape[0]

    @property
    def K(self) -> int:
        return self.norms.shape[2]

    @property
    def zero_fraction(self) -> float:
        return float(self.zero_flags.mean())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "group", "latent", "norm", "zero"])
            for t in range(self.T):
                for g, name in enumerate(self.group_names):
                    for j in range(self.K):
                        writer.writerow(
                            [t + 1, name, j + 1, _fmt(self.norms[t, g, j]), int(self.zero_flags[t, g, j])]
                        )


@dataclass(frozen=True)
class FactorRanking:
    """For one timestep: latent index (1-based) -> [(group name, norm), ...]."""

    t: int
    factors: dict[int, list[tuple[str, float]]]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "latent", "rank", "group", "norm"])
            for j, entries in self.factors.items():
                for rank, (name, norm) in enumerate(entries, start=1):
                    writer.writerow([self.t, j, rank, name, _fmt(norm)])


def _fmt(x: float) -> str:
    return "0" if x == 0.0 else repr(float(x))


def sparsity_report(model: DlgfaModel) -> SparsityReport:
    W = model.loadings
    return SparsityReport(
        norms=W.column_norms().copy(),
        zero_flags=W.zero_columns().copy(),
        group_names=model.config.group_spec.names,
    )


def _check_t(report: SparsityReport, t: int) -> None:
    if not 1 <= t <= report.T:
        raise DataError(f"t={t} outside 1..{report.T}")


def top_features_per_factor(report: SparsityReport, t: int, top_k: int | None = None) -> FactorRanking:
    """Groups ordered by column norm for each latent dimension at timestep ``t`` (1-based).

    Zero-norm groups are left out; ties keep group order.
    """
    _check_t(report, t)
    norms = report.norms[t - 1]
    factors = {}
    for j in range(report.K):
        order = np.argsort(-norms[:, j], kind="stable")
        entries = [(report.group_names[g], float(norms[g, j])) for g in order if norms[g, j] > 0]
        factors[j + 1] = entries if top_k is None else entries[:top_k]
    return FactorRanking(t, factors)


def export_heatmap_csv(report: SparsityReport, t: int, path) -> None:
    """Write the ``G x K`` norm matrix at timestep ``t`` (1-based)."""
    _check_t(report, t)
    norms = report.norms[t - 1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group"] + [f"z{j + 1}" for j in range(report.K)])
        for g, name in enumerate(report.group_names):
            writer.writerow([name] + [_fmt(v) for v in norms[g]])


def read_heatmap_csv(path) -> tuple[list[str], list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0][1:]
    names = [r[0] for r in rows[1:]]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return names, header, values


# --------------------------------------------------------------------------
# lambda selection


@dataclass(frozen=True)
class SweepRow:
    lam: float
    mse_val: float
    val_loglik: float
    zero_columns: int


def lambda_sweep(
    dataset: LongitudinalDataset,
    model_config: ModelConfig,
    optim_config: OptimConfig,
    lambdas: Sequence[float],
    split: SplitSpec = SplitSpec(),
    path=None,
    workers: int = 1,
) -> list[SweepRow]:
    """Train one model per lambda (same seed) and score it on the validation split."""
    lambdas = [float(x) for x in lambdas]
    if not lambdas or any(x < 0 for x in lambdas):
        raise ValueError("lambdas must be a non-empty list of non-negative values")
    train, val, _ = split_dataset(dataset, split)

    def run(lam: float) -> SweepRow:
        model, history = fit(train, model_config, replace(optim_config, lam=lam))
        return SweepRow(
            lam=lam,
            mse_val=mse_test(model, val),
            val_loglik=test_log_likelihood(model, val, num_samples=1, seed=optim_config.seed),
            zero_columns=int(model.loadings.zero_columns().sum()),
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, lambdas))
    else:
        rows = [run(lam) for lam in lambdas]
    if path is not None:
        write_sweep_csv(rows, path)
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "mse_val", "val_loglik", "zero_columns"])
        for r in rows:
            writer.writerow([repr(r.lam), repr(r.mse_val), repr(r.val_loglik), r.zero_columns])


def format_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Right-aligned plain-text table."""
    cells = [[str(h) for h in headers]] + [
        [f"{v:.6g}" if isinstance(v, float) else str(v) for v in row] for row in rows
    ]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
