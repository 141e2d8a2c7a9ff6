# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled scatter/segment kernels for the message-passing inner loop.

Accumulation order is the order of the index array, matching the numpy
fallback bit for bit.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def scatter_add_rows(double[:, ::1] src, long long[::1] index, Py_ssize_t num_rows):
    """Sum rows of ``src`` into an output of ``num_rows`` rows at ``index``."""
    cdef Py_ssize_t k = src.shape[0]
    cdef Py_ssize_t d = src.shape[1]
    out_arr = np.zeros((num_rows, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, row
    for i in range(k):
        row = index[i]
        if row < 0 or row >= num_rows:
            raise IndexError(f"row index {row} out of range for {num_rows} rows")
        for j in range(d):
            out[row, j] += src[i, j]
    return out_arr


def segment_sum(double[::1] values, long long[::1] seg, Py_ssize_t num_segments):
    """Sum ``values`` grouped by segment id."""
    cdef Py_ssize_t k = values.shape[0]
    out_arr = np.zeros(num_segments, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, s
    for i in range(k):
        s = seg[i]
        if s < 0 or s >= num_segments:
            raise IndexError(f"segment id {s} out of range for {num_segments} segments")
        out[s] += values[i]
    return out_arr


def segment_max(double[::1] values, long long[::1] seg, Py_ssize_t num_segments):
    """Max of ``values`` grouped by segment id; empty segments yield -inf."""
    cdef Py_ssize_t k = values.shape[0]
    out_arr = np.full(num_segments, -np.inf, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, s
    for i in range(k):
        s = seg[i]
        if s < 0 or s >= num_segments:
            raise IndexError(f"segment id {s} out of range for {num_segments} segments")
        if values[i] > out[s]:
            out[s] = values[i]
    return out_arr
