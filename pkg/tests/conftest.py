import numpy as np
import pytest

from noteem.core import (
    ActivationStack,
    FrameClock,
    NoteEvent,
    NoteSequence,
    PITCH_COUNT,
    PITCH_MIN,
)


@pytest.fixture
def clock():
    return FrameClock()


def random_notes(rng, n=8, pitch_range=(48, 84), max_onset=4.0,
                 instrument_count=1, with_instruments=False):
    """Uniform random notes, sorted; times are not quantized to frames."""
    notes = []
    for _ in range(n):
        onset = float(rng.uniform(0, max_onset))
        dur = float(rng.uniform(0.08, 0.8))
        pitch = int(rng.integers(pitch_range[0], pitch_range[1]))
        inst = int(rng.integers(0, instrument_count)) if with_instruments else None
        notes.append(NoteEvent(pitch, onset, onset + dur, inst))
    return NoteSequence.from_notes(notes, instrument_count)


def random_stack(rng, t=24, instrument_count=1, clock=FrameClock()):
    shape = (t, PITCH_COUNT * instrument_count)
    return ActivationStack(*(rng.random(shape).astype(np.float32) for _ in range(3)),
                           clock=clock, instrument_count=instrument_count)


def brute_force_path_cost(dist):
    """Minimum path cost by explicit monotone-path enumeration.

    Depth-first enumeration from (0,0) to the far corner, accumulating cell
    costs in path order. Branches are pruned only by the running best, which
    is sound because all cells are nonnegative (asserted); this stays a path
    enumerator, not a recurrence.
    """
    assert (dist >= 0).all()
    n, m = dist.shape
    best = [float("inf")]

    def walk(i, j, acc):
        acc = acc + float(dist[i, j])
        if acc >= best[0]:
            return
        if i == n - 1 and j == m - 1:
            best[0] = acc
            return
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)
        if i + 1 < n:
            walk(i + 1, j, acc)

    walk(0, 0, 0.0)
    return best[0]


def random_warp_path(rng, n, m):
    """A uniformly wandering monotone path from (0,0) to (n-1, m-1)."""
    from noteem.dtw import WarpPath
    pairs = [(0, 0)]
    i = j = 0
    while i < n - 1 or j < m - 1:
        options = []
        if i < n - 1 and j < m - 1:
            options.append((1, 1))
        if j < m - 1:
            options.append((0, 1))
        if i < n - 1:
            options.append((1, 0))
        di, dj = options[rng.integers(0, len(options))]
        i, j = i + di, j + dj
        pairs.append((i, j))
    return WarpPath(np.array(pairs, np.int64), 0.0, n, m)


def assert_grids_equal(a, b):
    assert np.array_equal(a.targets, b.targets)
    assert np.array_equal(a.masks, b.masks)
    assert np.array_equal(a.provenance, b.provenance)
