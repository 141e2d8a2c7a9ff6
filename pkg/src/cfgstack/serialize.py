"""Canonical text serialization: fixed float formatting and deterministic JSON.

Every artifact this package writes (corpus lines, checkpoints, manifests)
goes through these helpers so that identical inputs produce identical bytes.
Floats use 17 significant digits, which round-trips IEEE doubles exactly.
"""

import hashlib
import json
import math

import numpy as np


def format_float(x):
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite float {x!r}")
    if x == 0.0:
        # ".17g" prints negative zero as "-0", which JSON parses to the
        # integer 0 and loses the sign bit.
        return "-0.0" if math.copysign(1.0, x) < 0 else "0"
    return format(x, ".17g")


def canonical_json(obj):
    """Serialize to JSON with insertion-ordered keys and fixed float format."""
    parts = []
    _emit(obj, parts)
    return "".join(parts)


def _emit(obj, parts):
    if obj is None or obj is True or obj is False:
        parts.append(json.dumps(obj))
    elif isinstance(obj, str):
        parts.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, (int, np.integer)):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        parts.append(format_float(obj))
    elif isinstance(obj, np.ndarray):
        _emit(obj.tolist(), parts)
    elif isinstance(obj, dict):
        parts.append("{")
        for i, (key, value) in enumerate(obj.items()):
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be strings, got {key!r}")
            if i:
                parts.append(",")
            parts.append(json.dumps(key, ensure_ascii=False))
            parts.append(":")
            _emit(value, parts)
        parts.append("}")
    elif isinstance(obj, (list, tuple)):
        parts.append("[")
        for i, value in enumerate(obj):
            if i:
                parts.append(",")
            _emit(value, parts)
        parts.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__} to canonical JSON")


def sha256_hex(data):
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def config_hash(config_dict):
    """Stable hash of a configuration mapping (sorted keys)."""
    canon = json.dumps(config_dict, sort_keys=True, default=str)
    return sha256_hex(canon)
