import numpy as np
import pytest

from noteem.core import (
    ActivationStack,
    FrameClock,
    NoteEvent,
    NoteSequence,
    PITCH_COUNT,
    needed_frames,
    rasterize,
)
from noteem.descriptor import build_descriptors
from noteem.dtw import SingularReport, dtw_align, singular_points
from noteem.labeler import (
    FRAME,
    OFFSET,
    ONSET,
    LabelGrid,
    Provenance,
    PseudoLabelConfig,
    apply_pseudo_labels,
    assign_labels,
    label_pipeline,
    local_max_adjust,
    threshold_grid,
)
from conftest import assert_grids_equal, random_notes, random_warp_path


def no_singular():
    return SingularReport(np.array([], np.int64), np.array([], np.int64), 3, 100)


def clean_roll(rng, clock, n=8):
    """A roll whose onset/frame/offset cells never collide across notes."""
    notes = [NoteEvent(40 + 3 * i, i * 1.0, i * 1.0 + 0.5) for i in range(n)]
    return rasterize(NoteSequence.from_notes(notes), clock,
                     needed_frames(NoteSequence.from_notes(notes), clock))


def stack_like(grid_or_roll, fill=0.0):
    shape = (grid_or_roll.n_frames, grid_or_roll.n_classes)
    plane = np.full(shape, fill, np.float32)
    return ActivationStack(plane.copy(), plane.copy(), plane.copy(),
                           clock=grid_or_roll.clock,
                           instrument_count=grid_or_roll.instrument_count)


class TestAssignLabels:
    def test_identity_path_reproduces_roll(self, clock):
        rng = np.random.default_rng(0)
        roll = clean_roll(rng, clock)
        desc = build_descriptors(roll)
        path = dtw_align(desc, desc)
        grid = assign_labels(path, singular_points(path), roll)
        assert np.array_equal(grid.targets[ONSET], roll.onset)
        assert np.array_equal(grid.targets[FRAME], roll.frame)
        assert np.array_equal(grid.targets[OFFSET], roll.offset)
        assert grid.masks.all()

    def test_hierarchy_takes_max(self, clock):
        # M(0) = {0, 1}: frame at 0, onset at 1 -> onset wins
        roll = rasterize(NoteSequence.from_notes([NoteEvent(60, 0.0, 0.2)]), clock, 8)
        from noteem.dtw import WarpPath
        pairs = np.array([(0, 0), (0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7)])
        path = WarpPath(pairs, 0.0, 7, 8)
        roll2 = rasterize(NoteSequence.from_notes([NoteEvent(60, 0.032, 0.2)]), clock, 8)
        grid = assign_labels(path, no_singular(), roll2)
        assert grid.targets[ONSET, 0, 60 - 21] == 1
        assert grid.targets[FRAME, 0, 60 - 21] == 1

    def test_matches_per_cell_brute_force(self, clock):
        rng = np.random.default_rng(1)
        for _ in range(8):
            seq = random_notes(rng, n=6, max_onset=1.5)
            roll = rasterize(seq, clock, needed_frames(seq, clock))
            n = int(rng.integers(4, 40))
            path = random_warp_path(rng, n, roll.n_frames)
            sing = singular_points(path, w=3, w_prime=8)
            grid = assign_labels(path, sing, roll)
            singular = set(sing.collapsed) | set(sing.stretched)
            level_tgt = np.maximum(3 * roll.onset, np.maximum(2 * roll.frame, roll.offset))
            for t in range(n):
                mapped = [j for i, j in path.pairs if i == t]
                for c in range(roll.n_classes):
                    if t in singular:
                        level = 0
                        assert grid.masks[:, t, c].sum() == 0
                        assert (grid.provenance[:, t, c] == Provenance.SINGULAR_MASKED).all()
                    else:
                        level = max(level_tgt[j, c] for j in mapped)
                        assert grid.masks[:, t, c].all()
                    assert grid.targets[ONSET, t, c] == (level == 3)
                    assert grid.targets[FRAME, t, c] == (level >= 2)
                    assert grid.targets[OFFSET, t, c] == (level == 1)

    def test_shape_mismatch(self, clock):
        rng = np.random.default_rng(2)
        roll = clean_roll(rng, clock)
        path = random_warp_path(rng, 10, roll.n_frames + 3)
        from noteem.core import ShapeError
        with pytest.raises(ShapeError):
            assign_labels(path, no_singular(), roll)


class TestPseudoLabels:
    def make_grid(self, clock, t=12):
        roll = rasterize(NoteSequence.from_notes([NoteEvent(60, 0.0, 0.1)]), clock, t)
        return assign_labels(random_warp_path(np.random.default_rng(0), t, t),
                             no_singular(), roll)

    def test_confident_positive_overrides_singular_mask(self, clock):
        t = 12
        roll = rasterize(NoteSequence.from_notes([NoteEvent(60, 0.0, 0.1)]), clock, t)
        path = random_warp_path(np.random.default_rng(0), t, t)
        sing = SingularReport(np.array([5]), np.array([], np.int64), 3, 100)
        grid = assign_labels(path, sing, roll)
        assert grid.masks[ONSET, 5].sum() == 0

        stack = stack_like(grid, 0.3)
        stack.onset[5, 7] = 0.8
        out = apply_pseudo_labels(grid, stack, PseudoLabelConfig())
        assert out.targets[ONSET, 5, 7] == 1
        assert out.masks[ONSET, 5, 7] == 1
        assert out.provenance[ONSET, 5, 7] == Provenance.PSEUDO_POS
        # the rest of the singular row stays masked
        assert out.masks[ONSET, 5, 8] == 0

    def test_mid_confidence_unlabeled_onset_is_unknown(self, clock):
        grid = self.make_grid(clock)
        stack = stack_like(grid, 0.2)
        stack.onset[4, 10] = 0.6
        out = apply_pseudo_labels(grid, stack, PseudoLabelConfig())
        assert out.masks[ONSET, 4, 10] == 0
        assert out.provenance[ONSET, 4, 10] == Provenance.UNKNOWN_MASKED
        # frame head has no unknown band
        stack2 = stack_like(grid, 0.2)
        stack2.frame[4, 10] = 0.6
        out2 = apply_pseudo_labels(grid, stack2, PseudoLabelConfig())
        assert out2.masks[FRAME, 4, 10] == 1

    def test_low_confidence_never_flips_aligned_positive(self, clock):
        grid = self.make_grid(clock)
        cell = np.argwhere(grid.targets[FRAME] == 1)[0]
        stack = stack_like(grid, 0.2)
        stack.frame[cell[0], cell[1]] = 0.005
        out = apply_pseudo_labels(grid, stack, PseudoLabelConfig())
        assert out.targets[FRAME, cell[0], cell[1]] == 1
        assert out.provenance[FRAME, cell[0], cell[1]] == Provenance.ALIGNED

        flipped = apply_pseudo_labels(grid, stack, PseudoLabelConfig(),
                                      protect_aligned_positives=False)
        assert flipped.targets[FRAME, cell[0], cell[1]] == 0
        assert flipped.provenance[FRAME, cell[0], cell[1]] == Provenance.PSEUDO_NEG

    def test_idempotent(self, clock):
        rng = np.random.default_rng(3)
        grid = self.make_grid(clock)
        stack = ActivationStack(
            *(rng.random((grid.n_frames, grid.n_classes)).astype(np.float32) for _ in range(3)),
            clock=clock)
        once = apply_pseudo_labels(grid, stack, PseudoLabelConfig())
        twice = apply_pseudo_labels(once, stack, PseudoLabelConfig())
        assert_grids_equal(once, twice)

    def test_disabled_is_identity(self, clock):
        grid = self.make_grid(clock)
        stack = stack_like(grid, 0.9)
        out = apply_pseudo_labels(grid, stack, PseudoLabelConfig(enabled=False))
        assert_grids_equal(grid, out)

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            PseudoLabelConfig(t_pos=0.4)
        with pytest.raises(ValueError):
            PseudoLabelConfig(t_neg=0.6)


class TestLocalMax:
    def column_grid(self, clock, onset_frame, t=8, pitch=60):
        roll = rasterize(NoteSequence.from_notes(
            [NoteEvent(pitch, onset_frame * 0.032, onset_frame * 0.032 + 0.1)]), clock, t)
        path = random_warp_path(np.random.default_rng(0), t, t)
        # identity-ish grid straight from the roll
        return LabelGrid.from_roll(roll)

    def test_moves_to_neighbor_peak(self, clock):
        grid = self.column_grid(clock, onset_frame=1)
        stack = stack_like(grid)
        c = 60 - 21
        stack.onset[:4, c] = [0.1, 0.2, 0.9, 0.3]
        out = local_max_adjust(grid, stack, window=7, sweeps=1)
        assert out.targets[ONSET, 2, c] == 1
        assert out.targets[ONSET, 1, c] == 0
        # the frame run follows the onset
        assert out.targets[FRAME, 2, c] == 1

    def test_fixed_point_at_local_max(self, clock):
        grid = self.column_grid(clock, onset_frame=2)
        stack = stack_like(grid)
        c = 60 - 21
        stack.onset[:5, c] = [0.1, 0.2, 0.9, 0.3, 0.1]
        out = local_max_adjust(grid, stack)
        assert np.array_equal(out.targets[ONSET], grid.targets[ONSET])

    def test_plateau_needs_strict_improvement(self, clock):
        grid = self.column_grid(clock, onset_frame=2)
        stack = stack_like(grid, 0.5)  # everything equal
        out = local_max_adjust(grid, stack)
        assert np.array_equal(out.targets[ONSET], grid.targets[ONSET])

    def test_inclusive_marking_keeps_both_sides(self, clock):
        grid = self.column_grid(clock, onset_frame=3, t=8)
        stack = stack_like(grid)
        c = 60 - 21
        stack.onset[:7, c] = [0.1, 0.9, 0.2, 0.5, 0.2, 0.8, 0.1]
        out = local_max_adjust(grid, stack, window=5, sweeps=1)
        assert out.targets[ONSET, 1, c] == 1
        assert out.targets[ONSET, 5, c] == 1
        assert out.targets[ONSET, 3, c] == 0

    def test_displacement_bound(self, clock):
        rng = np.random.default_rng(4)
        window, sweeps = 7, 3
        bound = sweeps * (window - 1) // 2
        for _ in range(5):
            t = 40
            roll = rasterize(NoteSequence.from_notes([NoteEvent(60, 0.5, 0.7)]), clock, t)
            grid = LabelGrid.from_roll(roll)
            stack = ActivationStack(
                *(rng.random((t, PITCH_COUNT)).astype(np.float32) for _ in range(3)),
                clock=clock)
            out = local_max_adjust(grid, stack, window=window, sweeps=sweeps)
            start = np.flatnonzero(roll.onset[:, 60 - 21])[0]
            landed = np.flatnonzero(out.targets[ONSET, :, 60 - 21])
            assert landed.size >= 1
            assert np.abs(landed - start).max() <= bound

    def test_onset_always_on_frame(self, clock):
        rng = np.random.default_rng(5)
        for _ in range(5):
            seq = random_notes(rng, n=6, max_onset=1.0)
            roll = rasterize(seq, clock, needed_frames(seq, clock))
            grid = LabelGrid.from_roll(roll)
            stack = ActivationStack(
                *(rng.random((grid.n_frames, grid.n_classes)).astype(np.float32) for _ in range(3)),
                clock=clock)
            out = local_max_adjust(grid, stack)
            assert not np.any(out.targets[ONSET] & ~out.targets[FRAME])

    def test_even_window_rejected(self, clock):
        grid = self.column_grid(clock, 1)
        with pytest.raises(ValueError):
            local_max_adjust(grid, stack_like(grid), window=6)


class TestGridOps:
    def test_pitch_shift_moves_targets_and_masks_vacated(self, clock):
        rng = np.random.default_rng(6)
        roll = clean_roll(rng, clock, n=4)
        grid = LabelGrid.from_roll(roll)
        shifted = grid.pitch_shift(3)
        on_cols = np.flatnonzero(shifted.targets[ONSET].sum(axis=0))
        want = np.flatnonzero(grid.targets[ONSET].sum(axis=0)) + 3
        assert np.array_equal(on_cols, want)
        assert (shifted.provenance[:, :, :3] == Provenance.UNKNOWN_MASKED).all()
        assert (shifted.masks[:, :, :3] == 0).all()

    def test_threshold_grid(self, clock):
        rng = np.random.default_rng(7)
        stack = ActivationStack(*(rng.random((10, PITCH_COUNT)).astype(np.float32)
                                  for _ in range(3)), clock=clock)
        grid = threshold_grid(stack, 0.5)
        assert grid.masks.all()
        assert np.array_equal(grid.targets[OFFSET], (stack.offset > 0.5).astype(np.uint8))
        assert not np.any(grid.targets[ONSET] & ~grid.targets[FRAME])

    def test_pipeline_order_flags(self, clock):
        rng = np.random.default_rng(8)
        seq = random_notes(rng, n=5, max_onset=1.0)
        roll = rasterize(seq, clock, needed_frames(seq, clock))
        desc = build_descriptors(roll)
        path = dtw_align(desc, desc)
        sing = singular_points(path)
        stack = ActivationStack(*(rng.random((roll.n_frames, roll.n_classes)).astype(np.float32)
                                  for _ in range(3)), clock=clock)
        plain = label_pipeline(path, sing, roll, stack, pseudo=None, local_max=False)
        assert_grids_equal(plain, assign_labels(path, sing, roll))
