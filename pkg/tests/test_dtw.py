import numpy as np
import pytest

from noteem._kernels import _dp_py
from noteem.core import FrameClock, ShapeError, rasterize
from noteem.dtw import (
    BandError,
    WarpPath,
    dtw_align,
    pairwise_distances,
    singular_points,
)
from conftest import brute_force_path_cost, random_notes


def rand_desc(rng, t, scale=10.0):
    # already on the 1/1024 grid, so direct kernel calls see final values
    return np.round(rng.random((t, 12)) * scale * 1024.0) / 1024.0


def path_from_steps(steps):
    """Build a WarpPath from a step list, cost 0 (mapping-only tests)."""
    pairs = [(0, 0)]
    for di, dj in steps:
        pairs.append((pairs[-1][0] + di, pairs[-1][1] + dj))
    arr = np.array(pairs, np.int64)
    return WarpPath(arr, 0.0, int(arr[-1, 0]) + 1, int(arr[-1, 1]) + 1)


class TestAlign:
    def test_identity_is_diagonal_and_free(self):
        rng = np.random.default_rng(0)
        x = rand_desc(rng, 40)
        path = dtw_align(x, x)
        assert path.cost == 0.0
        assert len(path) == 40
        assert np.array_equal(path.pairs[:, 0], path.pairs[:, 1])

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            n, m = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            x, y = rand_desc(rng, n), rand_desc(rng, m)
            path = dtw_align(x, y)
            dist = pairwise_distances(x, y)
            expected = brute_force_path_cost(dist)
            assert path.cost == expected

    def test_duplicated_target_frames(self):
        rng = np.random.default_rng(2)
        x = rand_desc(rng, 10)
        y = np.repeat(x, 2, axis=0)
        path = dtw_align(x, y)
        assert path.cost == 0.0
        assert np.array_equal(path.source_counts, np.full(10, 2))

    def test_cost_symmetry(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            x, y = rand_desc(rng, int(rng.integers(2, 30))), rand_desc(rng, int(rng.integers(2, 30)))
            assert dtw_align(x, y).cost == dtw_align(y, x).cost

    def test_path_cost_is_sum_of_cells(self):
        rng = np.random.default_rng(4)
        x, y = rand_desc(rng, 12), rand_desc(rng, 17)
        path = dtw_align(x, y)
        dist = pairwise_distances(x, y)
        assert path.cost == sum(dist[i, j] for i, j in path.pairs)

    def test_band_matches_unbanded_when_wide_enough(self):
        rng = np.random.default_rng(5)
        x = rand_desc(rng, 30)
        y = x + np.round(rng.normal(0, 0.01, x.shape) * 1024.0) / 1024.0
        full = dtw_align(x, y)
        banded = dtw_align(x, y, band=15)
        assert banded.cost == full.cost
        assert np.array_equal(banded.pairs, full.pairs)

    def test_band_too_narrow(self):
        rng = np.random.default_rng(6)
        with pytest.raises(BandError):
            dtw_align(rand_desc(rng, 4), rand_desc(rng, 40), band=2)

    def test_empty_rejected(self):
        rng = np.random.default_rng(7)
        with pytest.raises(ShapeError):
            dtw_align(np.zeros((0, 12), np.float32), rand_desc(rng, 4))

    def test_normalized_cost(self):
        rng = np.random.default_rng(8)
        path = dtw_align(rand_desc(rng, 9), rand_desc(rng, 13))
        assert path.normalized_cost == path.cost / len(path)

    def test_self_alignment_stays_free_with_duplicates(self):
        rng = np.random.default_rng(9)
        x = rand_desc(rng, 8)
        for k in (1, 3, 7):
            padded = np.concatenate([x, np.repeat(x[-1:], k, axis=0)])
            assert dtw_align(padded, padded).normalized_cost == 0.0

    def test_cosine_metric(self):
        rng = np.random.default_rng(10)
        x = rand_desc(rng, 14)
        assert dtw_align(x, x, metric="cosine").cost == pytest.approx(0.0, abs=1e-9)
        y = rand_desc(rng, 9)
        assert dtw_align(x, y, metric="cosine").cost >= 0.0

    def test_rot12_invariance_of_cost_and_path(self):
        # folding origin is arbitrary: rotating descriptor columns must not
        # change the alignment
        rng = np.random.default_rng(11)
        x, y = rand_desc(rng, 15), rand_desc(rng, 21)
        base = dtw_align(x, y)
        rolled = dtw_align(np.roll(x, 5, axis=1), np.roll(y, 5, axis=1))
        assert rolled.cost == base.cost
        assert np.array_equal(rolled.pairs, base.pairs)


class TestKernelParity:
    def test_fallback_matches_active_backend(self):
        rng = np.random.default_rng(12)
        from noteem import _kernels
        for _ in range(5):
            n, m = int(rng.integers(1, 60)), int(rng.integers(1, 60))
            x, y = rand_desc(rng, n), rand_desc(rng, m)
            lo = np.zeros(n, np.int64)
            hi = np.full(n, m - 1, np.int64)
            a = _kernels.accumulate_from_features(x, y, lo, hi)
            b = _dp_py.accumulate_from_features(x, y, lo, hi)
            assert np.array_equal(a, b)

    def test_banded_parity(self):
        rng = np.random.default_rng(13)
        from noteem import _kernels
        n = m = 40
        x, y = rand_desc(rng, n), rand_desc(rng, m)
        center = np.arange(n) * m / n
        lo = np.clip(np.ceil(center - 6), 0, m - 1).astype(np.int64)
        hi = np.clip(np.floor(center + 6), 0, m - 1).astype(np.int64)
        a = _kernels.accumulate_from_features(x, y, lo, hi)
        b = _dp_py.accumulate_from_features(x, y, lo, hi)
        # compare only reachable cells; both mark the rest +inf
        assert np.array_equal(np.isfinite(a), np.isfinite(b))
        assert np.array_equal(a[np.isfinite(a)], b[np.isfinite(b)])


class TestSingularPoints:
    def test_diagonal_has_none(self):
        rng = np.random.default_rng(14)
        x = rand_desc(rng, 20)
        report = singular_points(dtw_align(x, x), w=1, w_prime=1)
        assert report.collapsed.size == 0 and report.stretched.size == 0

    def test_collapsed_source_frame(self):
        # source frame 5 absorbs five target frames
        steps = [(1, 1)] * 5 + [(0, 1)] * 4 + [(1, 1)] * 2
        path = path_from_steps(steps)
        assert np.array_equal(path.target_of(5), np.arange(5, 10))
        report = singular_points(path, w=3, w_prime=100)
        assert list(report.collapsed) == [5]
        assert report.stretched.size == 0

    def test_stretched_source_run(self):
        # target frame 7 absorbs source frames 20..140 (121 of them)
        steps = [(1, 1)] * 6 + [(1, 0)] * 13 + [(1, 1)] + [(1, 0)] * 120 + [(1, 1)] + [(1, 0)] * 8
        path = path_from_steps(steps)
        assert path.target_counts[7] == 121
        report = singular_points(path, w=3, w_prime=100)
        assert set(range(20, 141)) <= set(report.stretched)

    def test_thresholds_are_strict(self):
        steps = [(1, 1)] * 2 + [(0, 1)] * 2 + [(1, 1)]
        path = path_from_steps(steps)  # frame 2 maps to 3 targets
        assert singular_points(path, w=3).collapsed.size == 0
        assert list(singular_points(path, w=2).collapsed) == [2]

    def test_rasterized_self_alignment_clean(self, clock):
        rng = np.random.default_rng(15)
        from noteem.descriptor import build_descriptors
        seq = random_notes(rng, n=10)
        from noteem.core import needed_frames
        roll = rasterize(seq, clock, needed_frames(seq, clock))
        desc = build_descriptors(roll)
        path = dtw_align(desc, desc)
        report = singular_points(path)
        assert path.cost == 0.0
        assert report.count == 0
