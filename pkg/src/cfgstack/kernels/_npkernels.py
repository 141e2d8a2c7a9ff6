"""Pure-numpy fallback for the compiled scatter/segment kernels.

``np.add.at`` / ``np.maximum.at`` process indices in array order, so the
accumulation order matches the Cython loops exactly.
"""

import numpy as np


def _check_index(index, bound, what):
    if index.size and (index.min() < 0 or index.max() >= bound):
        bad = index[(index < 0) | (index >= bound)][0]
        raise IndexError(f"{what} {bad} out of range for {bound} {what}s")


def scatter_add_rows(src, index, num_rows):
    src = np.ascontiguousarray(src, dtype=np.float64)
    index = np.asarray(index, dtype=np.int64)
    _check_index(index, num_rows, "row index")
    out = np.zeros((num_rows, src.shape[1]), dtype=np.float64)
    np.add.at(out, index, src)
    return out


def segment_sum(values, seg, num_segments):
    values = np.asarray(values, dtype=np.float64)
    seg = np.asarray(seg, dtype=np.int64)
    _check_index(seg, num_segments, "segment id")
    return np.bincount(seg, weights=values, minlength=num_segments).astype(np.float64)


def segment_max(values, seg, num_segments):
    values = np.asarray(values, dtype=np.float64)
    seg = np.asarray(seg, dtype=np.int64)
    _check_index(seg, num_segments, "segment id")
    out = np.full(num_segments, -np.inf, dtype=np.float64)
    np.maximum.at(out, seg, values)
    return out
