"""Single-file model checkpoints.

Layout: the magic line ``DLGFA-CKPT 1``, an 8-byte little-endian header
length, a UTF-8 JSON header (model config, parameter names, shapes and
byte offsets, optional metadata), then the raw little-endian float64 data of
every parameter in header order.  Writing the same model twice yields
identical bytes and loading restores every value bit for bit.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import DlgfaModel, ModelConfig

MAGIC = b"DLGFA-CKPT 1\n"


def save_checkpoint(model: DlgfaModel, path, metadata: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, p in model.params.items():
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(p.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"config": model.config.to_dict(), "params": entries, "metadata": metadata or {}}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path) -> dict:
    if fh.read(len(MAGIC)) != MAGIC:
        raise DataError(f"{path}: not a dlgfa checkpoint")
    (n,) = struct.unpack("<Q", fh.read(8))
    return json.loads(fh.read(n).decode("utf-8"))


def load_checkpoint(path) -> DlgfaModel:
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        body = fh.read()
    model = DlgfaModel(ModelConfig.from_dict(header["config"]))
    state = {}
    for entry in header["params"]:
        start = entry["offset"]
        chunk = body[start : start + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise DataError(f"{path}: truncated data for {entry['name']}")
        state[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(entry["shape"]).astype(np.float64)
    missing = set(model.params.names()) - set(state)
    if missing:
        raise DataError(f"{path}: missing parameters {sorted(missing)}")
    model.params.load_state_dict(state)
    return model
