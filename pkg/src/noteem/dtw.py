"""Dynamic time warping between descriptor sequences.

Produces the monotone warp path together with its multi-valued frame mappings
and the singular-point sets used to mask unreliable label regions.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from . import _kernels
from .core import ShapeError


class BandError(ShapeError):
    """The requested band cannot connect the two sequence corners."""


@dataclass(frozen=True)
class WarpPath:
    """Monotone alignment path between a source of `n_source` frames and a
    target of `n_target` frames.

    `pairs` is an (L, 2) int array of (source, target) indices covering every
    frame on both sides; consecutive rows differ by a step from
    {(1,0),(0,1),(1,1)}. `cost` is the accumulated per-cell distance along the
    path.
    """

    pairs: np.ndarray
    cost: float
    n_source: int
    n_target: int

    def __post_init__(self) -> None:
        p = self.pairs
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] == 0:
            raise ValueError("pairs must be a nonempty (L, 2) array")
        if tuple(p[0]) != (0, 0) or tuple(p[-1]) != (self.n_source - 1, self.n_target - 1):
            raise ValueError("path must run corner to corner")
        steps = np.diff(p, axis=0)
        if steps.size and (steps.min() < 0 or steps.max() > 1 or not steps.max(axis=1).all()):
            raise ValueError("steps must come from {(1,0),(0,1),(1,1)}")

    @property
    def normalized_cost(self) -> float:
        """Cost per path cell; comparable across piece lengths."""
        return self.cost / len(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    @cached_property
    def source_counts(self) -> np.ndarray:
        """|M(i)| for every source frame i."""
        return np.bincount(self.pairs[:, 0], minlength=self.n_source)

    @cached_property
    def target_counts(self) -> np.ndarray:
        """|M^-1(j)| for every target frame j."""
        return np.bincount(self.pairs[:, 1], minlength=self.n_target)

    @cached_property
    def source_spans(self) -> tuple[np.ndarray, np.ndarray]:
        """Per source frame i, the inclusive target range (first, last) = M(i).

        Monotonicity makes every M(i) contiguous, so two arrays suffice.
        """
        first = np.zeros(self.n_source, np.int64)
        last = np.zeros(self.n_source, np.int64)
        src, tgt = self.pairs[:, 0], self.pairs[:, 1]
        starts = np.flatnonzero(np.r_[True, np.diff(src) > 0])
        ends = np.r_[starts[1:] - 1, len(src) - 1]
        first[src[starts]] = tgt[starts]
        last[src[starts]] = tgt[ends]
        return first, last

    def target_of(self, i: int) -> np.ndarray:
        """M(i) as an index array."""
        first, last = self.source_spans
        return np.arange(first[i], last[i] + 1)


@dataclass(frozen=True)
class SingularReport:
    """Source frames whose mapping indicates a score/performance contradiction.

    `collapsed` holds frames mapped to more than `w` target frames (a long
    target stretch collapsed onto one source frame); `stretched` holds frames
    belonging to a target frame's preimage longer than `w_prime`.
    """

    collapsed: np.ndarray
    stretched: np.ndarray
    w: int
    w_prime: int

    def union_mask(self, n_frames: int) -> np.ndarray:
        mask = np.zeros(n_frames, bool)
        mask[self.collapsed] = True
        mask[self.stretched] = True
        return mask

    @property
    def count(self) -> int:
        return int(np.union1d(self.collapsed, self.stretched).size)


def singular_points(path: WarpPath, w: int = 3, w_prime: int = 100) -> SingularReport:
    """Classify singular source frames from the warp path's mapping widths."""
    if w < 1 or w_prime < 1:
        raise ValueError("window sizes must be >= 1")
    collapsed = np.flatnonzero(path.source_counts > w)
    wide_targets = path.target_counts > w_prime
    src, tgt = path.pairs[:, 0], path.pairs[:, 1]
    stretched = np.unique(src[wide_targets[tgt]])
    return SingularReport(collapsed, stretched, w, w_prime)


def _band_limits(n: int, m: int, band: Optional[int]) -> tuple[np.ndarray, np.ndarray]:
    if band is None:
        return (np.zeros(n, np.int64), np.full(n, m - 1, np.int64))
    center = np.arange(n, dtype=np.float64) * m / n
    lo = np.clip(np.ceil(center - band), 0, m - 1).astype(np.int64)
    hi = np.clip(np.floor(center + band), 0, m - 1).astype(np.int64)
    if lo[0] > 0 or hi[-1] < m - 1:
        raise BandError(f"band {band} excludes a corner of the {n}x{m} grid")
    if np.any(lo > hi) or np.any(lo[1:] > hi[:-1] + 1):
        raise BandError(f"band {band} too narrow to connect rows of the {n}x{m} grid")
    return lo, hi


def quantize_descriptors(x: np.ndarray) -> np.ndarray:
    """Snap descriptor values to a 1/1024 grid, float64.

    With entries on this grid (and magnitudes up to ~1e4), squared-difference
    sums and path accumulations stay exactly representable in float64, so
    alignment costs do not depend on summation order: enumeration oracles,
    pitch-class rotations, and both kernel backends agree bit for bit.
    """
    return np.round(np.asarray(x, np.float64) * 1024.0) / 1024.0


def pairwise_distances(x: np.ndarray, y: np.ndarray, metric: str = "sqeuclidean") -> np.ndarray:
    """Per-cell distance matrix between descriptor rows (float64)."""
    x = np.ascontiguousarray(quantize_descriptors(x))
    y = np.ascontiguousarray(quantize_descriptors(y))
    if metric == "sqeuclidean":
        return _kernels.pairwise_sq(x, y)
    if metric == "cosine":
        xn = np.linalg.norm(x, axis=1)
        yn = np.linalg.norm(y, axis=1)
        denom = np.outer(xn, yn)
        sim = np.zeros((x.shape[0], y.shape[0]), np.float64)
        np.divide(x @ y.T, denom, out=sim, where=denom > 0)
        both_zero = np.outer(xn == 0, yn == 0)
        dist = 1.0 - sim
        dist[both_zero] = 0.0
        return np.maximum(dist, 0.0)
    raise ValueError(f"unknown metric {metric!r}")


def _backtrack(acc: np.ndarray) -> np.ndarray:
    n, m = acc.shape
    i, j = n - 1, m - 1
    rev = [(i, j)]
    while i or j:
        if i and j:
            diag = acc[i - 1, j - 1]
            left = acc[i, j - 1]
            up = acc[i - 1, j]
            best = min(diag, left, up)
            # deterministic preference: diagonal, then (0,1), then (1,0)
            if diag == best:
                i, j = i - 1, j - 1
            elif left == best:
                j -= 1
            else:
                i -= 1
        elif j:
            j -= 1
        else:
            i -= 1
        rev.append((i, j))
    return np.array(rev[::-1], np.int64)


def dtw_align(x: np.ndarray, y: np.ndarray, band: Optional[int] = None,
              metric: str = "sqeuclidean") -> WarpPath:
    """Optimal monotone alignment of descriptor sequence `x` onto `y`.

    Steps come from {(1,0),(0,1),(1,1)}; ties during backtracking prefer the
    diagonal, then advancing the target. `band`, when given, restricts the
    path to |i*m/n - j| <= band and errors out if that cannot connect the
    corners.
    """
    x = np.ascontiguousarray(quantize_descriptors(x))
    y = np.ascontiguousarray(quantize_descriptors(y))
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ShapeError(f"descriptor shapes {x.shape} / {y.shape} are incompatible")
    n, m = x.shape[0], y.shape[0]
    if n == 0 or m == 0:
        raise ShapeError("cannot align an empty sequence")
    lo, hi = _band_limits(n, m, band)
    if metric == "sqeuclidean":
        acc = _kernels.accumulate_from_features(x, y, lo, hi)
    else:
        acc = _kernels.accumulate_dist(pairwise_distances(x, y, metric), lo, hi)
    cost = float(acc[n - 1, m - 1])
    if not np.isfinite(cost):
        raise BandError("no path reached the corner inside the band")
    return WarpPath(_backtrack(acc), cost, n, m)
