"""Longitudinal grouped datasets: synthetic one-bar images, wide CSV I/O,
splitting and batching into ``(T, B, d)`` arrays."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError
from .model import GroupSpec


@dataclass(frozen=True)
class LongitudinalDataset:
    """``sequences`` has shape ``(N, T, d)``; columns are grouped contiguously."""

    sequences: np.ndarray
    group_spec: GroupSpec
    subject_ids: tuple[str, ...] = ()
    time_index: tuple = ()

    def __post_init__(self):
        seq = np.asarray(self.sequences, dtype=np.float64)
        if seq.ndim != 3:
            raise DataError(f"sequences must be (N, T, d), got shape {seq.shape}")
        if np.isnan(seq).any():
            raise DataError("dataset contains NaN")
        if seq.shape[2] != self.group_spec.d:
            raise DataError(f"group dims sum to {self.group_spec.d} but data has d={seq.shape[2]}")
        N, T, _ = seq.shape
        ids = tuple(self.subject_ids) if self.subject_ids else tuple(f"s{i + 1:05d}" for i in range(N))
        times = tuple(self.time_index) if self.time_index else tuple(range(1, T + 1))
        if len(ids) != N or len(times) != T:
            raise DataError("subject_ids / time_index lengths do not match the data")
        seq.setflags(write=False)
        object.__setattr__(self, "sequences", seq)
        object.__setattr__(self, "subject_ids", ids)
        object.__setattr__(self, "time_index", times)

    @property
    def N(self) -> int:
        return self.sequences.shape[0]

    @property
    def T(self) -> int:
        return self.sequences.shape[1]

    @property
    def d(self) -> int:
        return self.sequences.shape[2]

    def __len__(self) -> int:
        return self.N

    def subset(self, indices) -> LongitudinalDataset:
        indices = np.asarray(indices, dtype=int)
        return LongitudinalDataset(
            self.sequences[indices],
            self.group_spec,
            tuple(self.subject_ids[i] for i in indices),
            self.time_index,
        )


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions):
            raise DataError(f"split fractions must be three positive numbers, got {self.fractions}")
        if not math.isclose(sum(self.fractions), 1.0, abs_tol=1e-9):
            raise DataError(f"split fractions must sum to 1, got {sum(self.fractions)}")


# --------------------------------------------------------------------------
# synthetic data


def one_bar_image(size: int, row: int) -> np.ndarray:
    img = np.zeros((size, size))
    img[row] = 1.0
    return img


def generate_one_bar(
    n: int,
    size: int = 8,
    noise_sd: float = 0.05,
    seed: int = 0,
    mode: str = "row_as_time",
    T: int = 20,
) -> LongitudinalDataset:
    """Noisy images with a single horizontal bar; each image row is a group.

    ``row_as_time``: a sequence has ``size`` timesteps and the bar sits on
    row ``t`` at timestep ``t``.  ``replicate_T``: one image with the bar on
    a random row is repeated for ``T`` timesteps.
    """
    if size < 2:
        raise DataError("size must be >= 2")
    if n < 1:
        raise DataError("n must be >= 1")
    if noise_sd < 0:
        raise DataError("noise_sd must be >= 0")
    rng = np.random.default_rng(seed)
    d = size * size
    if mode == "row_as_time":
        clean = np.stack([one_bar_image(size, t).reshape(d) for t in range(size)])
        data = clean[None] + noise_sd * rng.standard_normal((n, size, d))
    elif mode == "replicate_T":
        if T < 1:
            raise DataError("T must be >= 1")
        rows = rng.integers(0, size, size=n)
        images = np.zeros((n, d))
        images.reshape(n, size, size)[np.arange(n), rows] = 1.0
        images = images + noise_sd * rng.standard_normal((n, d))
        data = np.repeat(images[:, None, :], T, axis=1)
    else:
        raise DataError(f"unknown mode {mode!r}")
    groups = GroupSpec.uniform(size, size, prefix="row")
    return LongitudinalDataset(data, groups)


def surrogate_dataset(
    n: int,
    T: int,
    group_dims: Sequence[int],
    seed: int = 0,
    n_factors: int = 3,
    noise_sd: float = 0.1,
    names: Sequence[str] = (),
) -> LongitudinalDataset:
    """Smooth low-rank trajectories with the requested group layout.

    Stands in for real recordings when only the data shape matters.
    """
    rng = np.random.default_rng(seed)
    d = int(sum(group_dims))
    t = np.linspace(0.0, 2.0 * np.pi, T)
    freq = rng.uniform(0.5, 2.0, size=(n, n_factors))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(n, n_factors))
    factors = np.sin(freq[:, None, :] * t[None, :, None] + phase[:, None, :])
    loadings = rng.normal(0.0, 1.0 / np.sqrt(n_factors), size=(n_factors, d))
    data = factors @ loadings + noise_sd * rng.standard_normal((n, T, d))
    return LongitudinalDataset(data, GroupSpec(tuple(group_dims), tuple(names)))


# --------------------------------------------------------------------------
# CSV


def _format(value: float) -> str:
    return repr(float(value))


def save_wide_csv(ds: LongitudinalDataset, path) -> None:
    """Write one row per (subject, t) with ``group.feature`` column headers."""
    gs = ds.group_spec
    header = ["subject", "t"]
    for g, name in enumerate(gs.names):
        header += [f"{name}.{j + 1}" for j in range(gs.dims[g])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, sid in enumerate(ds.subject_ids):
            for k, t in enumerate(ds.time_index):
                writer.writerow([sid, t] + [_format(v) for v in ds.sequences[i, k]])


def _parse_time(label: str, lineno: int):
    try:
        value = float(label)
    except ValueError:
        raise DataError(f"line {lineno}: time label {label!r} is not numeric") from None
    return int(value) if value.is_integer() else value


def _subject_key(sid: str):
    try:
        return (0, float(sid), sid)
    except ValueError:
        return (1, 0.0, sid)


def load_wide_csv(path, group_map: Mapping[str, str] | None = None) -> LongitudinalDataset:
    """Read a ``subject,t,<group>.<feature>,...`` file.

    ``group_map`` maps column names to group names; by default the group is
    the header text before the first ``.``.  Columns are regrouped in order
    of each group's first appearance, rows are sorted by subject then ``t``.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 3 or header[0].strip() != "subject" or header[1].strip() != "t":
            raise DataError(f"{path}: line 1: header must start with 'subject,t' and name at least one feature")
        columns = [h.strip() for h in header[2:]]
        if len(set(columns)) != len(columns):
            raise DataError(f"{path}: line 1: duplicate column names")
        groups_of = []
        for col in columns:
            if group_map is not None:
                if col not in group_map:
                    raise DataError(f"{path}: line 1: column {col!r} missing from group map")
                groups_of.append(group_map[col])
            else:
                if "." not in col:
                    raise DataError(f"{path}: line 1: column {col!r} is not of the form group.feature")
                groups_of.append(col.split(".", 1)[0])

        rows: dict[tuple[str, object], tuple[int, list[float]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {lineno}: expected {len(header)} cells, found {len(row)}")
            sid = row[0].strip()
            t = _parse_time(row[1].strip(), lineno)
            try:
                values = [float(c) for c in row[2:]]
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-numeric cell") from None
            if any(math.isnan(v) for v in values):
                raise DataError(f"{path}: line {lineno}: NaN values are not supported")
            if (sid, t) in rows:
                raise DataError(f"{path}: line {lineno}: duplicate row for subject {sid!r} at t={t}")
            rows[(sid, t)] = (lineno, values)

    if not rows:
        raise DataError(f"{path}: no data rows")
    per_subject: dict[str, dict] = {}
    for (sid, t), entry in rows.items():
        per_subject.setdefault(sid, {})[t] = entry
    subjects = sorted(per_subject, key=_subject_key)
    times = sorted(per_subject[subjects[0]])
    for sid in subjects:
        found = sorted(per_subject[sid])
        if found != times:
            first_line = min(lineno for lineno, _ in per_subject[sid].values())
            raise DataError(
                f"{path}: line {first_line}: subject {sid!r} has timesteps {found}, expected {times}"
            )

    group_order: list[str] = []
    for g in groups_of:
        if g not in group_order:
            group_order.append(g)
    col_order = [i for g in group_order for i, gi in enumerate(groups_of) if gi == g]
    dims = tuple(groups_of.count(g) for g in group_order)

    data = np.array(
        [[per_subject[sid][t][1] for t in times] for sid in subjects], dtype=np.float64
    )[:, :, col_order]
    return LongitudinalDataset(data, GroupSpec(dims, tuple(group_order)), tuple(subjects), tuple(times))


# --------------------------------------------------------------------------
# splitting and batching


def split_sizes(N: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    n_val = int(round(fractions[1] * N))
    n_test = int(round(fractions[2] * N))
    n_train = N - n_val - n_test
    return n_train, n_val, n_test


def split_dataset(ds: LongitudinalDataset, spec: SplitSpec = SplitSpec()):
    """Random disjoint (train, val, test) partition by sequence."""
    if ds.N < 3:
        raise DataError("need at least 3 sequences to split")
    n_train, n_val, n_test = split_sizes(ds.N, spec.fractions)
    if min(n_train, n_val, n_test) < 1:
        raise DataError(f"split of N={ds.N} with {spec.fractions} leaves an empty part")
    perm = np.random.default_rng(spec.seed).permutation(ds.N)
    return (
        ds.subset(np.sort(perm[:n_train])),
        ds.subset(np.sort(perm[n_train : n_train + n_val])),
        ds.subset(np.sort(perm[n_train + n_val :])),
    )


def make_batches(ds: LongitudinalDataset, batch_size: int, seed=0, shuffle: bool = True) -> list[np.ndarray]:
    """Shuffle sequences and cut them into time-major ``(T, B, d)`` batches.

    The final batch keeps its true (smaller) size.
    """
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    order = np.random.default_rng(seed).permutation(ds.N) if shuffle else np.arange(ds.N)
    return [
        np.ascontiguousarray(ds.sequences[order[i : i + batch_size]].transpose(1, 0, 2))
        for i in range(0, ds.N, batch_size)
    ]
