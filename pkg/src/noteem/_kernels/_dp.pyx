# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled dynamic-programming kernels for the alignment inner loop.

Both entry points fill the accumulated-cost matrix for the step set
{(1,0),(0,1),(1,1)} under optional per-row band limits. Cells outside the
band stay +inf. Descriptors arrive snapped to a 1/1024 grid, so every float64
sum below is exact and the results are bit-identical to the NumPy fallback.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def accumulate_from_features(cnp.float64_t[:, ::1] x, cnp.float64_t[:, ::1] y,
                             cnp.int64_t[::1] lo, cnp.int64_t[::1] hi):
    """Fused squared-Euclidean distance + cost accumulation.

    x: (n, k) source descriptors, y: (m, k) target descriptors,
    lo/hi: inclusive per-row column bounds. Returns the (n, m) float64
    accumulated-cost matrix.
    """
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = y.shape[0]
    cdef Py_ssize_t k = x.shape[1]
    acc_arr = np.full((n, m), np.inf, dtype=np.float64)
    cdef cnp.float64_t[:, ::1] acc = acc_arr
    cdef Py_ssize_t i, j, kk
    cdef double d, diff, best, v
    cdef double INF = <double> np.inf

    with nogil:
        for i in range(n):
            for j in range(lo[i], hi[i] + 1):
                d = 0
                for kk in range(k):
                    diff = x[i, kk] - y[j, kk]
                    d = d + diff * diff
                if i == 0 and j == 0:
                    acc[0, 0] = d
                    continue
                best = INF
                if j > 0:
                    best = acc[i, j - 1]
                if i > 0:
                    v = acc[i - 1, j]
                    if v < best:
                        best = v
                    if j > 0:
                        v = acc[i - 1, j - 1]
                        if v < best:
                            best = v
                acc[i, j] = d + best
    return acc_arr


def accumulate_dist(cnp.float64_t[:, ::1] dist,
                    cnp.int64_t[::1] lo, cnp.int64_t[::1] hi):
    """Cost accumulation over a precomputed (n, m) float64 distance matrix."""
    cdef Py_ssize_t n = dist.shape[0]
    cdef Py_ssize_t m = dist.shape[1]
    acc_arr = np.full((n, m), np.inf, dtype=np.float64)
    cdef cnp.float64_t[:, ::1] acc = acc_arr
    cdef Py_ssize_t i, j
    cdef double best, v
    cdef double INF = <double> np.inf

    with nogil:
        for i in range(n):
            for j in range(lo[i], hi[i] + 1):
                if i == 0 and j == 0:
                    acc[0, 0] = dist[0, 0]
                    continue
                best = INF
                if j > 0:
                    best = acc[i, j - 1]
                if i > 0:
                    v = acc[i - 1, j]
                    if v < best:
                        best = v
                    if j > 0:
                        v = acc[i - 1, j - 1]
                        if v < best:
                            best = v
                acc[i, j] = dist[i, j] + best
    return acc_arr
