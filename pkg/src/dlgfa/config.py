"""Run configuration files.

A TOML file with three tables and one top-level key::

    output_dir = "runs/bars"

    [model]            # K, H, p, T, static_mode, x_feat, z_feat, z_hidden,
                       # encoder_hidden, decoders_per_timestep
    [optim]            # lr_adam, lr_prox, lambda, max_epochs, max_iterations,
                       # batch_size, tol, patience, seed, weight_decay,
                       # checkpoint_every
    [data]             # source = "synthetic" | "csv"; synthetic: size, n,
                       # noise_sd, seed, mode, T; csv: path, group_map;
                       # both: split, split_seed

Unknown keys are rejected.  ``model.T`` defaults to the data length and the
group layout always comes from the data.
"""

from __future__ import annotations

import re
import secrets
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import tomli

from .errors import ConfigError
from .optim import OptimConfig

_INT, _FLOAT, _BOOL, _STR = "int", "float", "bool", "str"

MODEL_KEYS: dict[str, tuple[str, Any]] = {
    "K": (_INT, 8),
    "H": (_INT, 32),
    "p": (_INT, 1),
    "T": (_INT, None),
    "static_mode": (_BOOL, False),
    "x_feat": (_INT, None),
    "z_feat": (_INT, None),
    "z_hidden": (_INT, None),
    "encoder_hidden": (_INT, 0),
    "decoders_per_timestep": (_BOOL, False),
}

OPTIM_KEYS: dict[str, tuple[str, Any]] = {
    "lr_adam": (_FLOAT, 1e-3),
    "lr_prox": (_FLOAT, 1e-4),
    "lambda": (_FLOAT, 5.0),
    "max_epochs": (_INT, 100),
    "max_iterations": (_INT, None),
    "batch_size": (_INT, 64),
    "tol": (_FLOAT, 1e-5),
    "patience": (_INT, 10),
    "seed": (_INT, None),
    "weight_decay": (_FLOAT, 0.0),
    "checkpoint_every": (_INT, 0),
}

DATA_KEYS: dict[str, tuple[str, Any]] = {
    "source": (_STR, None),
    "path": (_STR, None),
    "group_map": ("table", None),
    "size": (_INT, 8),
    "n": (_INT, 2000),
    "noise_sd": (_FLOAT, 0.05),
    "seed": (_INT, 0),
    "mode": (_STR, "row_as_time"),
    "T": (_INT, 20),
    "split": ("floats", [0.8, 0.1, 0.1]),
    "split_seed": (_INT, 0),
}

# (minimum, strict) per numeric key; strict means value must exceed minimum
_RANGES = {
    "model.K": (1, False), "model.H": (1, False), "model.p": (1, False), "model.T": (1, False),
    "model.x_feat": (1, False), "model.z_feat": (1, False), "model.z_hidden": (1, False),
    "model.encoder_hidden": (0, False),
    "optim.lr_adam": (0, True), "optim.lr_prox": (0, True), "optim.lambda": (0, False),
    "optim.max_epochs": (0, False), "optim.max_iterations": (0, False), "optim.batch_size": (1, False),
    "optim.tol": (0, True), "optim.patience": (1, False), "optim.seed": (0, False),
    "optim.weight_decay": (0, False), "optim.checkpoint_every": (0, False),
    "data.size": (2, False), "data.n": (1, False), "data.noise_sd": (0, False), "data.seed": (0, False),
    "data.T": (1, False), "data.split_seed": (0, False),
}


@dataclass(frozen=True)
class DataConfig:
    source: str
    path: str | None = None
    group_map: dict | None = None
    size: int = 8
    n: int = 2000
    noise_sd: float = 0.05
    seed: int = 0
    mode: str = "row_as_time"
    T: int = 20
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    model: dict
    optim: OptimConfig
    data: DataConfig
    output_dir: Path
    checkpoint_every: int = 0
    seed_generated: bool = False

    def to_dict(self) -> dict:
        """Fully resolved values; feeding this back reproduces the run."""
        optim = self.optim.to_dict()
        optim["lambda"] = optim.pop("lam")
        for key in ("beta1", "beta2", "adam_eps"):
            optim.pop(key)
        optim["checkpoint_every"] = self.checkpoint_every
        data = {k: v for k, v in self.data.__dict__.items() if v is not None}
        data["split"] = list(self.data.split)
        return {
            "output_dir": str(self.output_dir),
            "model": {k: v for k, v in self.model.items() if v is not None},
            "optim": {k: v for k, v in optim.items() if v is not None},
            "data": data,
        }


def _line_of(text: str | None, dotted: str) -> int | None:
    if not text:
        return None
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"^\[([^\[\]]+)\]", stripped)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"^([A-Za-z0-9_.\-\"' ]+?)\s*=", stripped)
        if not m:
            continue
        name = m.group(1).replace('"', "").replace("'", "").replace(" ", "")
        full = f"{section}.{name}" if section else name
        if full == dotted or full.startswith(dotted + "."):
            return lineno
    return None


def _err(text: str | None, dotted: str, message: str) -> ConfigError:
    line = _line_of(text, dotted)
    where = f" (line {line})" if line else ""
    return ConfigError(f"{dotted}{where}: {message}")


def _coerce(kind: str, value, dotted: str, text: str | None):
    if value is None:
        return None
    if kind == _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise _err(text, dotted, f"expected an integer, got {value!r}")
        return value
    if kind == _FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _err(text, dotted, f"expected a number, got {value!r}")
        return float(value)
    if kind == _BOOL:
        if not isinstance(value, bool):
            raise _err(text, dotted, f"expected true/false, got {value!r}")
        return value
    if kind == _STR:
        if not isinstance(value, str):
            raise _err(text, dotted, f"expected a string, got {value!r}")
        return value
    if kind == "table":
        if not isinstance(value, dict) or not all(isinstance(v, str) for v in value.values()):
            raise _err(text, dotted, "expected a table of column = group strings")
        return dict(value)
    if kind == "floats":
        if not isinstance(value, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            raise _err(text, dotted, f"expected a list of numbers, got {value!r}")
        return [float(v) for v in value]
    raise AssertionError(kind)


def _section(raw: dict, name: str, spec: dict, text: str | None) -> dict:
    values = raw.get(name, {})
    if not isinstance(values, dict):
        raise _err(text, name, "expected a table")
    for key in values:
        if key not in spec:
            raise _err(text, f"{name}.{key}", "unknown key")
    out = {}
    for key, (kind, default) in spec.items():
        dotted = f"{name}.{key}"
        value = _coerce(kind, values.get(key), dotted, text)
        if value is None:
            value = default
        if value is not None and dotted in _RANGES:
            lo, strict = _RANGES[dotted]
            if value < lo or (strict and value == lo):
                bound = f"> {lo}" if strict else f">= {lo}"
                raise _err(text, dotted, f"value {value!r} out of range (must be {bound})")
        out[key] = value
    return out


def config_from_dict(raw: dict, text: str | None = None, base_dir: Path | None = None) -> RunConfig:
    for key in raw:
        if key not in ("model", "optim", "data", "output_dir"):
            raise _err(text, key, "unknown key")
    model = _section(raw, "model", MODEL_KEYS, text)
    optim = _section(raw, "optim", OPTIM_KEYS, text)
    data = _section(raw, "data", DATA_KEYS, text)

    if data["source"] is None:
        raise _err(text, "data.source", 'required; set it to "synthetic" or "csv"')
    if data["source"] not in ("synthetic", "csv"):
        raise _err(text, "data.source", f'must be "synthetic" or "csv", got {data["source"]!r}')
    if data["source"] == "csv":
        if data["path"] is None:
            raise _err(text, "data.path", "required when data.source is csv")
        path = Path(data["path"])
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        if not path.exists():
            raise _err(text, "data.path", f"file not found: {path}")
        data["path"] = str(path.resolve())
    if data["mode"] not in ("row_as_time", "replicate_T"):
        raise _err(text, "data.mode", f'must be "row_as_time" or "replicate_T", got {data["mode"]!r}')
    split = data["split"]
    if len(split) != 3 or any(f <= 0 for f in split) or abs(sum(split) - 1.0) > 1e-9:
        raise _err(text, "data.split", f"need three positive fractions summing to 1, got {split}")
    data["split"] = tuple(split)

    seed_generated = False
    if optim["seed"] is None:
        optim["seed"] = secrets.randbits(31)
        seed_generated = True

    out_raw = raw.get("output_dir", "output")
    if not isinstance(out_raw, str):
        raise _err(text, "output_dir", "expected a string")
    output_dir = Path(out_raw)
    if not output_dir.is_absolute() and base_dir is not None:
        output_dir = base_dir / output_dir

    checkpoint_every = optim.pop("checkpoint_every")
    optim["lam"] = optim.pop("lambda")
    return RunConfig(
        model=model,
        optim=OptimConfig(**optim),
        data=DataConfig(**data),
        output_dir=output_dir,
        checkpoint_every=checkpoint_every,
        seed_generated=seed_generated,
    )


def apply_overrides(raw: dict, overrides: dict[str, Any]) -> dict:
    """Return a copy of ``raw`` with dotted keys replaced (``None`` values skipped)."""
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if not key:
            out[section] = value
        else:
            out.setdefault(section, {})[key] = value
    return out


def load_raw(path) -> tuple[dict, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return raw, text


def parse_config(path, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Read and validate a TOML run configuration; ``overrides`` win over the file."""
    raw, text = load_raw(path)
    if overrides:
        raw = apply_overrides(raw, overrides)
    return config_from_dict(raw, text, base_dir=Path(path).resolve().parent)
