import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noteem.core import (
    FrameClock,
    NoteEvent,
    NoteSequence,
    PITCH_COUNT,
    ShapeError,
    extract_notes,
    frame_of,
    needed_frames,
    rasterize,
    shift_labels,
    transpose,
)
from conftest import random_notes


class TestFrameClock:
    def test_default_fps(self, clock):
        assert clock.fps_float == 31.25

    def test_invalid(self):
        with pytest.raises(ValueError):
            FrameClock(sample_rate=0)
        with pytest.raises(ValueError):
            FrameClock(hop=-1)


class TestFrameOf:
    def test_one_second(self, clock):
        # 31.25 rounds down to 31
        assert frame_of(1.0, clock) == 31

    def test_half_rounds_away_from_zero(self, clock):
        # 0.016 s * 31.25 = 0.5 exactly
        assert frame_of(0.016, clock) == 1

    def test_zero(self, clock):
        assert frame_of(0.0, clock) == 0

    def test_negative_rejected(self, clock):
        with pytest.raises(ValueError):
            frame_of(-0.1, clock)


class TestNoteEvent:
    def test_validation(self):
        with pytest.raises(ValueError):
            NoteEvent(20, 0.0, 1.0)
        with pytest.raises(ValueError):
            NoteEvent(60, 1.0, 1.0)
        with pytest.raises(ValueError):
            NoteEvent(60, 0.0, 1.0, velocity=0)

    def test_sequence_sorting(self):
        a = NoteEvent(70, 1.0, 2.0)
        b = NoteEvent(60, 0.5, 2.5)
        seq = NoteSequence.from_notes([a, b])
        assert seq.notes == (b, a)
        with pytest.raises(ValueError):
            NoteSequence((a, b))

    def test_instrument_bound(self):
        n = NoteEvent(60, 0.0, 1.0, instrument=2)
        with pytest.raises(ValueError):
            NoteSequence((n,), instrument_count=2)


class TestRasterize:
    def test_short_note(self, clock):
        # 0.064 s at 31.25 fps: onset frame 0, frames {0,1}, offset frame 2
        seq = NoteSequence.from_notes([NoteEvent(60, 0.0, 0.064)])
        roll = rasterize(seq, clock, 4)
        c = 60 - 21
        assert roll.onset[0, c] == 1 and roll.onset.sum() == 1
        assert list(np.flatnonzero(roll.frame[:, c])) == [0, 1]
        assert roll.offset[2, c] == 1 and roll.offset.sum() == 1

    def test_empty_sequence(self, clock):
        roll = rasterize(NoteSequence(()), clock, 10)
        assert roll.onset.sum() == roll.frame.sum() == roll.offset.sum() == 0

    def test_brute_force_membership(self, clock):
        # every cell checked against a direct per-note membership test
        rng = np.random.default_rng(7)
        seq = random_notes(rng, n=3, max_onset=1.2)
        t_total = 64
        roll = rasterize(seq, clock, t_total)
        from noteem.core import note_frames
        for t in range(t_total):
            for c in range(PITCH_COUNT):
                on = fr = off = 0
                for note in seq:
                    if seq.class_of(note) != c:
                        continue
                    f0, f1 = note_frames(note, clock)
                    on |= t == f0
                    fr |= f0 <= t < f1
                    off |= t == f1
                assert roll.onset[t, c] == on
                assert roll.frame[t, c] == fr
                assert roll.offset[t, c] == off

    def test_note_past_end_raises(self, clock):
        seq = NoteSequence.from_notes([NoteEvent(60, 0.0, 10.0)])
        with pytest.raises(ShapeError, match="pitch 60"):
            rasterize(seq, clock, 5)

    def test_zero_length_note_widened(self, clock):
        seq = NoteSequence.from_notes([NoteEvent(60, 0.5, 0.5001)])
        roll = rasterize(seq, clock, needed_frames(seq, clock))
        assert roll.frame.sum() == 1

    def test_onset_implies_frame(self, clock):
        rng = np.random.default_rng(3)
        for _ in range(10):
            seq = random_notes(rng, n=12)
            roll = rasterize(seq, clock, needed_frames(seq, clock))
            assert not np.any(roll.onset & ~roll.frame)

    def test_overlapping_same_pitch_keeps_both_onsets(self, clock):
        seq = NoteSequence.from_notes([
            NoteEvent(60, 0.0, 1.0),
            NoteEvent(60, 0.4, 0.7),
        ])
        roll = rasterize(seq, clock, needed_frames(seq, clock))
        assert roll.onset[:, 60 - 21].sum() == 2
        assert roll.offset[:, 60 - 21].sum() == 2


class TestExtractNotes:
    def test_round_trip_within_half_frame(self, clock):
        rng = np.random.default_rng(11)
        for _ in range(5):
            # non-overlapping notes: one per pitch slot
            notes = [NoteEvent(50 + i * 2, i * 1.0 + rng.uniform(0, 0.4), i * 1.0 + 0.9)
                     for i in range(6)]
            seq = NoteSequence.from_notes(notes)
            roll = rasterize(seq, clock, needed_frames(seq, clock))
            out = extract_notes(roll)
            assert len(out) == len(seq)
            half = 0.5 / clock.fps_float
            for a, b in zip(seq, out):
                assert a.pitch == b.pitch
                assert abs(a.onset_s - b.onset_s) <= half + 1e-9
                assert abs(a.offset_s - b.offset_s) <= half + 1e-9


class TestShiftLabels:
    def test_identity(self, clock):
        rng = np.random.default_rng(2)
        seq = random_notes(rng, n=6)
        roll = rasterize(seq, clock, needed_frames(seq, clock))
        shifted, dropped = shift_labels(roll, 0)
        assert dropped == 0
        for a, b in zip(roll.planes(), shifted.planes()):
            assert np.array_equal(a, b)

    def test_bottom_note_falls_off(self, clock):
        seq = NoteSequence.from_notes([NoteEvent(21, 0.0, 0.1)])
        roll = rasterize(seq, clock, 8)
        shifted, dropped = shift_labels(roll, -1)
        assert shifted.onset.sum() == shifted.frame.sum() == shifted.offset.sum() == 0
        # one onset, one offset, and the note's frame cells all dropped
        assert dropped == 2 + roll.frame.sum()

    def test_translation(self, clock):
        seq = NoteSequence.from_notes([NoteEvent(p, 0.1 * i, 0.1 * i + 0.2)
                                       for i, p in enumerate((60, 64, 67))])
        roll = rasterize(seq, clock, needed_frames(seq, clock))
        shifted, dropped = shift_labels(roll, 5)
        assert dropped == 0
        want = {65 - 21, 69 - 21, 72 - 21}
        assert set(np.flatnonzero(shifted.onset.sum(axis=0))) == want

    def test_round_trip_restricted_to_survivors(self, clock):
        rng = np.random.default_rng(5)
        seq = random_notes(rng, n=10, pitch_range=(22, 107))
        roll = rasterize(seq, clock, needed_frames(seq, clock))
        for k in (-5, -2, 3, 5):
            there, _ = shift_labels(roll, k)
            back, _ = shift_labels(there, -k)
            # surviving cells must return to where they started
            for orig, rt in zip(roll.planes(), back.planes()):
                assert np.array_equal(rt, orig & rt)
            survivors, _ = shift_labels(back, k)
            for a, b in zip(there.planes(), survivors.planes()):
                assert np.array_equal(a, b)

    @given(st.integers(-5, 5), st.integers(0, 4))
    @settings(max_examples=20, deadline=None)
    def test_count_conservation(self, k, seed):
        clock = FrameClock()
        rng = np.random.default_rng(seed)
        seq = random_notes(rng, n=8, pitch_range=(22, 107), instrument_count=2,
                           with_instruments=True)
        roll = rasterize(seq, clock, needed_frames(seq, clock))
        total = sum(int(p.sum()) for p in roll.planes())
        shifted, dropped = shift_labels(roll, k)
        kept = sum(int(p.sum()) for p in shifted.planes())
        assert kept == total - dropped

    def test_instrument_blocks_independent(self, clock):
        notes = [NoteEvent(30, 0.0, 0.2, instrument=0), NoteEvent(100, 0.0, 0.2, instrument=1)]
        seq = NoteSequence.from_notes(notes, instrument_count=2)
        roll = rasterize(seq, clock, 10)
        shifted, dropped = shift_labels(roll, -5)
        # block 0 keeps pitch 25; block 1 keeps pitch 95; nothing leaks across
        cols = np.flatnonzero(shifted.onset.sum(axis=0))
        assert list(cols) == [25 - 21, PITCH_COUNT + 95 - 21]
        assert dropped == 0


class TestTranspose:
    def test_drops_out_of_range(self):
        seq = NoteSequence.from_notes([NoteEvent(21, 0.0, 1.0), NoteEvent(60, 0.0, 1.0)])
        up = transpose(seq, -1)
        assert [n.pitch for n in up] == [59]
