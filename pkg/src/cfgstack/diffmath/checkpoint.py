"""Versioned checkpoint format: structured text, exact float round-trip.

Layout::

    {"format": "cfgstack-checkpoint", "version": 1, "kind": "...",
     "meta": {...}, "params": {name: {"shape": [...], "data": [...]}}}

Parameter arrays are nested lists matching the shape tag. Loading a file
with an unexpected format, version, or kind is refused.
"""

import json
from pathlib import Path

import numpy as np

from ..serialize import canonical_json

FORMAT_NAME = "cfgstack-checkpoint"
FORMAT_VERSION = 1


def checkpoint_text(kind, params, meta=None):
    payload = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": kind,
        "meta": meta or {},
        "params": {
            name: {"shape": list(arr.shape), "data": arr.tolist()}
            for name, arr in _as_arrays(params).items()
        },
    }
    return canonical_json(payload) + "\n"


def save_checkpoint(path, kind, params, meta=None):
    Path(path).write_text(checkpoint_text(kind, params, meta), encoding="utf-8")


def load_checkpoint(path, expected_kind=None):
    """Returns (kind, {name: ndarray}, meta)."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if raw.get("format") != FORMAT_NAME:
        raise ValueError(f"{path}: not a {FORMAT_NAME} file")
    if raw.get("version") != FORMAT_VERSION:
        raise ValueError(
            f"{path}: unsupported checkpoint version {raw.get('version')!r}"
        )
    kind = raw.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise ValueError(f"{path}: checkpoint kind {kind!r}, expected {expected_kind!r}")
    params = {}
    for name, entry in raw["params"].items():
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        params[name] = arr
    return kind, params, raw.get("meta", {})


def _as_arrays(params):
    if hasattr(params, "arrays"):
        return params.arrays()
    return {name: np.asarray(a, dtype=np.float64) for name, a in params.items()}
