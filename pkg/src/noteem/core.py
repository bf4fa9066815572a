"""Domain types and frame arithmetic: clocks, note events, target rolls,
activation stacks, rasterization, and pitch-shift label transforms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterator, Optional, Sequence

import numpy as np

PITCH_MIN = 21
PITCH_MAX = 108
PITCH_COUNT = PITCH_MAX - PITCH_MIN + 1  # 88 keys


class InputError(Exception):
    """Unreadable or malformed input (bad file, bad config)."""


class ShapeError(Exception):
    """Structurally valid inputs that do not fit together."""


@dataclass(frozen=True)
class FrameClock:
    """Analysis frame clock: `sample_rate` samples/s, one frame per `hop` samples."""

    sample_rate: int = 16000
    hop: int = 512

    def __post_init__(self) -> None:
        if self.sample_rate <= 0 or self.hop <= 0:
            raise ValueError(f"sample_rate and hop must be positive, got {self.sample_rate}/{self.hop}")

    @property
    def fps(self) -> Fraction:
        """Frames per second as an exact rational."""
        return Fraction(self.sample_rate, self.hop)

    @property
    def fps_float(self) -> float:
        return self.sample_rate / self.hop

    def seconds(self, frame: int) -> float:
        """Time of a frame index in seconds."""
        return frame * self.hop / self.sample_rate


def frame_of(t_s: float, clock: FrameClock) -> int:
    """Map a time in seconds to the nearest frame index.

    Exact rational rounding; ties round half away from zero (0.016 s at
    31.25 fps lands on frame 1, not 0).
    """
    if t_s < 0:
        raise ValueError(f"time must be >= 0, got {t_s}")
    return math.floor(Fraction(t_s) * clock.fps + Fraction(1, 2))


@dataclass(frozen=True, order=True)
class NoteEvent:
    """A single note: MIDI pitch, onset/offset in seconds, optional instrument class."""

    pitch: int
    onset_s: float
    offset_s: float
    instrument: Optional[int] = None
    velocity: Optional[int] = None

    def __post_init__(self) -> None:
        if not PITCH_MIN <= self.pitch <= PITCH_MAX:
            raise ValueError(f"pitch must be in [{PITCH_MIN}, {PITCH_MAX}], got {self.pitch}")
        if self.onset_s < 0:
            raise ValueError(f"onset must be >= 0, got {self.onset_s}")
        if self.offset_s <= self.onset_s:
            raise ValueError(f"offset must be > onset, got [{self.onset_s}, {self.offset_s}]")
        if self.velocity is not None and not 1 <= self.velocity <= 127:
            raise ValueError(f"velocity must be in [1, 127], got {self.velocity}")

    @property
    def duration(self) -> float:
        return self.offset_s - self.onset_s


@dataclass(frozen=True)
class NoteSequence:
    """Notes sorted by (onset, pitch) plus the instrument class count."""

    notes: tuple[NoteEvent, ...]
    instrument_count: int = 1

    def __post_init__(self) -> None:
        if self.instrument_count < 1:
            raise ValueError("instrument_count must be >= 1")
        for a, b in zip(self.notes, self.notes[1:]):
            if (a.onset_s, a.pitch) > (b.onset_s, b.pitch):
                raise ValueError("notes must be sorted by (onset, pitch)")
        for n in self.notes:
            if n.instrument is not None and not 0 <= n.instrument < self.instrument_count:
                raise ValueError(f"instrument id {n.instrument} outside [0, {self.instrument_count})")

    @classmethod
    def from_notes(cls, notes: Sequence[NoteEvent], instrument_count: int = 1) -> "NoteSequence":
        """Build a sequence from notes in any order."""
        return cls(tuple(sorted(notes, key=lambda n: (n.onset_s, n.pitch))), instrument_count)

    def __len__(self) -> int:
        return len(self.notes)

    def __iter__(self) -> Iterator[NoteEvent]:
        return iter(self.notes)

    @property
    def n_classes(self) -> int:
        return PITCH_COUNT * self.instrument_count

    def class_of(self, note: NoteEvent) -> int:
        """Column index of a note: instrument block, then pitch within the block."""
        return (note.instrument or 0) * PITCH_COUNT + (note.pitch - PITCH_MIN)

    def end_time(self) -> float:
        return max((n.offset_s for n in self.notes), default=0.0)


def transpose(seq: NoteSequence, semitones: int) -> NoteSequence:
    """Shift every pitch by `semitones`, dropping notes leaving the 88-key range."""
    kept = [
        replace(n, pitch=n.pitch + semitones)
        for n in seq.notes
        if PITCH_MIN <= n.pitch + semitones <= PITCH_MAX
    ]
    return NoteSequence.from_notes(kept, seq.instrument_count)


def _check_planes(onset: np.ndarray, frame: np.ndarray, offset: np.ndarray,
                  instrument_count: int) -> None:
    if not onset.shape == frame.shape == offset.shape:
        raise ShapeError(f"head shapes differ: {onset.shape}, {frame.shape}, {offset.shape}")
    if onset.ndim != 2:
        raise ShapeError(f"expected T x C matrices, got ndim={onset.ndim}")
    if onset.shape[1] != PITCH_COUNT * instrument_count:
        raise ShapeError(
            f"class axis is {onset.shape[1]}, expected {PITCH_COUNT}*{instrument_count}")


@dataclass(frozen=True)
class TargetRoll:
    """Binary onset/frame/offset targets on the frame grid (T x C, C = 88*I).

    An onset or offset occupies exactly one frame; the frame plane covers
    [onset frame, offset frame).
    """

    onset: np.ndarray
    frame: np.ndarray
    offset: np.ndarray
    clock: FrameClock = field(default_factory=FrameClock)
    instrument_count: int = 1

    def __post_init__(self) -> None:
        _check_planes(self.onset, self.frame, self.offset, self.instrument_count)
        if np.any(self.onset & ~self.frame):
            raise ValueError("every onset cell must also be a frame cell")

    @property
    def n_frames(self) -> int:
        return self.onset.shape[0]

    @property
    def n_classes(self) -> int:
        return self.onset.shape[1]

    @classmethod
    def zeros(cls, n_frames: int, clock: FrameClock = FrameClock(),
              instrument_count: int = 1) -> "TargetRoll":
        shape = (n_frames, PITCH_COUNT * instrument_count)
        return cls(np.zeros(shape, np.uint8), np.zeros(shape, np.uint8),
                   np.zeros(shape, np.uint8), clock, instrument_count)

    def planes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.onset, self.frame, self.offset


@dataclass(frozen=True)
class ActivationStack:
    """Per-frame head probabilities in [0, 1] (T x C, C = 88*I)."""

    onset: np.ndarray
    frame: np.ndarray
    offset: np.ndarray
    clock: FrameClock = field(default_factory=FrameClock)
    instrument_count: int = 1

    def __post_init__(self) -> None:
        _check_planes(self.onset, self.frame, self.offset, self.instrument_count)
        for name, plane in (("onset", self.onset), ("frame", self.frame), ("offset", self.offset)):
            if plane.size and (plane.min() < 0.0 or plane.max() > 1.0):
                raise ValueError(f"{name} probabilities outside [0, 1]")

    @property
    def n_frames(self) -> int:
        return self.onset.shape[0]

    @property
    def n_classes(self) -> int:
        return self.onset.shape[1]

    def planes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.onset, self.frame, self.offset


def note_frames(note: NoteEvent, clock: FrameClock) -> tuple[int, int]:
    """Quantized (onset, offset) frame pair; zero-length notes widen to one frame."""
    on_f = frame_of(note.onset_s, clock)
    off_f = frame_of(note.offset_s, clock)
    if off_f <= on_f:
        off_f = on_f + 1
    return on_f, off_f


def needed_frames(seq: NoteSequence, clock: FrameClock) -> int:
    """Smallest frame count that can hold every quantized note (offset frame included)."""
    last = 0
    for n in seq.notes:
        last = max(last, note_frames(n, clock)[1])
    return last + 1


def rasterize(seq: NoteSequence, clock: FrameClock, length_frames: int) -> TargetRoll:
    """Render note events onto the frame grid.

    The onset frame is round(onset*fps) and carries both the onset and the
    start of the frame run; the offset frame closes the run and carries the
    offset marker. Overlapping same-pitch notes merge their frame runs but
    keep every onset and offset.
    """
    roll = TargetRoll.zeros(length_frames, clock, seq.instrument_count)
    onset, frame, offset = roll.planes()
    for note in seq.notes:
        on_f, off_f = note_frames(note, clock)
        if off_f >= length_frames:
            raise ShapeError(
                f"note (pitch {note.pitch}, {note.onset_s:.3f}-{note.offset_s:.3f}s) ends at "
                f"frame {off_f}, beyond the {length_frames}-frame roll")
        c = seq.class_of(note)
        onset[on_f, c] = 1
        frame[on_f:off_f, c] = 1
        offset[off_f, c] = 1
    return roll


def shift_class_matrix(matrix: np.ndarray, semitones: int,
                       instrument_count: int) -> tuple[np.ndarray, int]:
    """Translate a T x C matrix by `semitones` within each 88-wide instrument block.

    Returns the shifted matrix and the number of nonzero cells that fell off
    the keyboard edge.
    """
    t = matrix.shape[0]
    blocks = matrix.reshape(t, instrument_count, PITCH_COUNT)
    out = np.zeros_like(blocks)
    if semitones >= 0:
        kept = blocks[:, :, : PITCH_COUNT - semitones]
        out[:, :, semitones:] = kept
    else:
        kept = blocks[:, :, -semitones:]
        out[:, :, : PITCH_COUNT + semitones] = kept
    dropped = int(np.count_nonzero(blocks)) - int(np.count_nonzero(kept))
    return out.reshape(matrix.shape), dropped


def shift_labels(roll: TargetRoll, semitones: int) -> tuple[TargetRoll, int]:
    """Pitch-shift a target roll; activations leaving [21, 108] are dropped.

    Returns the shifted roll and the total count of dropped cells across the
    three heads.
    """
    if abs(semitones) > 5:
        raise ValueError(f"shift must be within [-5, 5], got {semitones}")
    dropped = 0
    planes = []
    for plane in roll.planes():
        shifted, d = shift_class_matrix(plane, semitones, roll.instrument_count)
        planes.append(shifted)
        dropped += d
    return TargetRoll(*planes, clock=roll.clock, instrument_count=roll.instrument_count), dropped


def shift_stack(stack: ActivationStack, semitones: int) -> tuple[ActivationStack, int]:
    """Pitch-shift an activation stack; cells leaving the keyboard are dropped.

    Returns the shifted stack and the count of dropped nonzero cells.
    """
    dropped = 0
    planes = []
    for plane in stack.planes():
        shifted, d = shift_class_matrix(plane, semitones, stack.instrument_count)
        planes.append(shifted)
        dropped += d
    return ActivationStack(*planes, clock=stack.clock,
                           instrument_count=stack.instrument_count), dropped


def extract_notes(roll: TargetRoll) -> NoteSequence:
    """Decode a roll back into note events.

    A note starts at each onset cell and extends along the frame run until
    the run ends or a new onset cuts it. Inverse of `rasterize` up to
    half-frame time quantization for non-overlapping notes.
    """
    t_total = roll.n_frames
    notes = []
    for c in range(roll.n_classes):
        on_col = roll.onset[:, c]
        fr_col = roll.frame[:, c]
        for t0 in np.flatnonzero(on_col):
            t = int(t0) + 1
            while t < t_total and fr_col[t] and not on_col[t]:
                t += 1
            pitch = PITCH_MIN + c % PITCH_COUNT
            instrument = c // PITCH_COUNT if roll.instrument_count > 1 else None
            notes.append(NoteEvent(pitch, roll.clock.seconds(int(t0)),
                                   roll.clock.seconds(t), instrument))
    return NoteSequence.from_notes(notes, roll.instrument_count)


def threshold_stack(stack: ActivationStack, onset_thr: float = 0.5,
                    frame_thr: float = 0.5, offset_thr: float = 0.5) -> TargetRoll:
    """Binarize an activation stack into a roll (frame plane absorbs onsets so
    the onset-implies-frame invariant holds)."""
    onset = (stack.onset > onset_thr).astype(np.uint8)
    frame = ((stack.frame > frame_thr) | (stack.onset > onset_thr)).astype(np.uint8)
    offset = (stack.offset > offset_thr).astype(np.uint8)
    return TargetRoll(onset, frame, offset, stack.clock, stack.instrument_count)
