"""Alignment DP kernels.

The compiled Cython extension is used when present; otherwise the NumPy
fallback takes over. Both produce bit-identical float32 matrices; the
compiled path is roughly an order of magnitude faster (see
benchmarks/bench_dtw.py).
"""
from ._dp_py import pairwise_sq  # noqa: F401  (shared by both backends)

try:
    from ._dp import accumulate_dist, accumulate_from_features
    COMPILED = True
except ImportError:  # built without the extension, e.g. a plain source checkout
    from ._dp_py import accumulate_dist, accumulate_from_features
    COMPILED = False

__all__ = ["accumulate_dist", "accumulate_from_features", "pairwise_sq", "COMPILED"]
