"""Checkpoint container: an ``.npz`` archive with a JSON header.

Layout (format version 1)::

    __header__        uint8 array holding UTF-8 JSON:
                      {"format": "jnfbench-checkpoint", "version": 1,
                       "config": {...ModelConfig...}, "extra": {...},
                       "params": [names in storage order],
                       "sha256": hex digest}
    param/<name>      float64 array for every model parameter

The digest covers, for every parameter in storage order, the UTF-8 name
followed by the array's shape (as JSON) and its little-endian float64 bytes.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .autodiff import parameter
from .model import Model, ModelConfig

FORMAT = "jnfbench-checkpoint"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _digest(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name, arr in arrays.items():
        h.update(name.encode())
        h.update(json.dumps(list(arr.shape)).encode())
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


def save_checkpoint(model: Model, path: str | Path, extra: dict | None = None) -> Path:
    path = Path(path)
    arrays = {name: np.asarray(t.value, dtype=np.float64) for name, t in model.params.items()}
    header = {
        "format": FORMAT,
        "version": VERSION,
        "config": model.config.to_dict(),
        "extra": extra or {},
        "params": list(arrays),
        "sha256": _digest(arrays),
    }
    blob = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    payload = {f"param/{k}": v for k, v in arrays.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=blob, **payload)
    return path


def read_header(path: str | Path) -> dict:
    try:
        with np.load(path, allow_pickle=False) as data:
            return json.loads(bytes(data["__header__"]).decode())
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from exc


def load_checkpoint(path: str | Path, expect_variant: str | None = None) -> Model:
    path = Path(path)
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc
    with data:
        if "__header__" not in data:
            raise CheckpointError(f"{path}: missing header")
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("format") != FORMAT:
            raise CheckpointError(f"{path}: unknown format {header.get('format')!r}")
        if header.get("version") != VERSION:
            raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
        arrays = {name: np.array(data[f"param/{name}"]) for name in header["params"]}
    if _digest(arrays) != header["sha256"]:
        raise CheckpointError(f"{path}: checksum mismatch")
    config = ModelConfig.from_dict(header["config"])
    if expect_variant is not None and config.variant != expect_variant:
        raise CheckpointError(f"{path}: checkpoint holds {config.variant}, expected {expect_variant}")
    dtype = np.dtype(config.dtype)
    params = {name: parameter(arr.astype(dtype), name) for name, arr in arrays.items()}
    model = Model(config, params)
    model.extra = header.get("extra", {})
    return model
