"""Scatter/segment kernels with backend selection at import time.

The compiled Cython extension is used when available; otherwise a pure-numpy
fallback with identical semantics (including accumulation order) takes over.
Set CFGSTACK_PURE_KERNELS=1 to force the fallback, e.g. for benchmarking.
"""

import os

import numpy as np

from . import _npkernels

if os.environ.get("CFGSTACK_PURE_KERNELS") == "1":
    _impl = _npkernels
    BACKEND = "numpy"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _npkernels
        BACKEND = "numpy"


def scatter_add_rows(src, index, num_rows):
    """Sum the rows of ``src`` (k, d) into a (num_rows, d) array at ``index``."""
    src = np.ascontiguousarray(src, dtype=np.float64)
    index = np.ascontiguousarray(index, dtype=np.int64)
    return _impl.scatter_add_rows(src, index, int(num_rows))


def segment_sum(values, seg, num_segments):
    """Sum ``values`` (k,) grouped by segment ids ``seg`` (k,)."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    seg = np.ascontiguousarray(seg, dtype=np.int64)
    return _impl.segment_sum(values, seg, int(num_segments))


def segment_max(values, seg, num_segments):
    """Max of ``values`` per segment; empty segments yield -inf."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    seg = np.ascontiguousarray(seg, dtype=np.int64)
    return _impl.segment_max(values, seg, int(num_segments))


def segment_softmax(values, seg, num_segments):
    """Softmax of ``values`` within each segment (max-shifted for stability)."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    seg = np.ascontiguousarray(seg, dtype=np.int64)
    if values.size == 0:
        return values.copy()
    m = segment_max(values, seg, num_segments)
    e = np.exp(values - m[seg])
    denom = segment_sum(e, seg, num_segments)
    return e / denom[seg]
