"""Pure-NumPy fallback for the alignment DP kernels.

The recursion runs over anti-diagonals so each wavefront is a vectorized
minimum. Descriptors arrive snapped to a 1/1024 grid, making every float64
sum exact; the fallback is therefore bit-identical to the compiled kernel.
"""
from __future__ import annotations

import numpy as np


def pairwise_sq(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between descriptor rows, float64."""
    n, m = x.shape[0], y.shape[0]
    dist = np.zeros((n, m), np.float64)
    for k in range(x.shape[1]):
        diff = x[:, k, None] - y[None, :, k]
        dist += diff * diff
    return dist


def _accumulate(dist: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    n, m = dist.shape
    cols = np.arange(m)
    banded = not (np.all(lo == 0) and np.all(hi == m - 1))
    if banded:
        dist = dist.copy()
        dist[(cols[None, :] < lo[:, None]) | (cols[None, :] > hi[:, None])] = np.inf

    # one-cell halo of +inf removes all edge cases from the wavefront update
    padded = np.full((n + 1, m + 1), np.inf, np.float64)
    flat = padded.ravel()
    dflat = dist.ravel()
    padded[1, 1] = dist[0, 0]
    width = m + 1
    idx_all = np.arange(max(n, m) + 1, dtype=np.intp)
    for s in range(1, n + m - 1):
        i0 = max(0, s - m + 1)
        i1 = min(n - 1, s)
        ii = idx_all[i0:i1 + 1]
        jj = s - ii
        at = (ii + 1) * width + (jj + 1)
        best = np.minimum(np.minimum(flat[at - width - 1], flat[at - width]),
                          flat[at - 1])
        flat[at] = dflat[ii * m + jj] + best
    return padded[1:, 1:]


def accumulate_from_features(x: np.ndarray, y: np.ndarray,
                             lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Distance computation plus accumulation; see the compiled twin."""
    return _accumulate(pairwise_sq(x, y), lo, hi)


def accumulate_dist(dist: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Accumulation over a precomputed float64 distance matrix."""
    return _accumulate(dist, lo, hi)
