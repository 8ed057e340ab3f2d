"""Weight files: a flat little-endian float64 array plus a JSON sidecar of shapes."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import ExchangeParams


def save_params(params: ExchangeParams, path) -> None:
    """Write ``path`` (raw ``<f8`` values) and ``path`` + ``.json`` (names and shapes)."""
    path = Path(path)
    named = params.named_arrays()
    layout = [{"name": name, "shape": list(np.shape(arr))} for name, arr in named]
    flat = np.concatenate([np.asarray(arr, dtype="<f8").ravel() for _, arr in named])
    path.parent.mkdir(parents=True, exist_ok=True)
    flat.tofile(path)
    sidecar = {"dtype": "<f8", "count": int(flat.size), "arrays": layout}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_params(path) -> ExchangeParams:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    flat = np.fromfile(path, dtype="<f8")
    if flat.size != meta["count"]:
        raise ValueError(f"{path}: expected {meta['count']} values, found {flat.size}")
    arrays, offset = {}, 0
    for entry in meta["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        arrays[entry["name"]] = flat[offset:offset + n].reshape(shape).astype(np.float64)
        offset += n
    return ExchangeParams.from_named_arrays(arrays)
