"""Ground-truth factory for desk-scale runs: score generation, performance
simulation (tempo warping, jitter, inserts/deletes/swaps), and a noisy oracle
that stands in for an imperfect transcriber.

Everything is deterministic under its seed, so corpora are reproducible
byte for byte.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import (
    ActivationStack,
    FrameClock,
    NoteEvent,
    NoteSequence,
    PITCH_MAX,
    PITCH_MIN,
    needed_frames,
    note_frames,
    rasterize,
)
from .em import Piece, TrainExample, Transcriber

MIN_DURATION_S = 0.02


@dataclass(frozen=True)
class TimeMap:
    """Piecewise-linear strictly increasing time map (score s -> performance s)."""

    knots_in: tuple[float, ...]
    knots_out: tuple[float, ...]

    def __post_init__(self) -> None:
        xi, yo = np.asarray(self.knots_in), np.asarray(self.knots_out)
        if len(xi) < 2 or len(xi) != len(yo):
            raise ValueError("need matching knot arrays of length >= 2")
        if np.any(np.diff(xi) <= 0) or np.any(np.diff(yo) <= 0):
            raise ValueError("time map must be strictly increasing")

    @classmethod
    def identity(cls, until: float = 1.0) -> "TimeMap":
        return cls((0.0, max(until, 1.0)), (0.0, max(until, 1.0)))

    def slopes(self) -> np.ndarray:
        xi, yo = np.asarray(self.knots_in), np.asarray(self.knots_out)
        return np.diff(yo) / np.diff(xi)

    def __call__(self, t):
        xi, yo = np.asarray(self.knots_in), np.asarray(self.knots_out)
        t = np.asarray(t, np.float64)
        # extrapolate with the edge slopes rather than clamping
        out = np.interp(t, xi, yo)
        lo, hi = t < xi[0], t > xi[-1]
        out = np.where(lo, yo[0] + (t - xi[0]) * self.slopes()[0], out)
        out = np.where(hi, yo[-1] + (t - xi[-1]) * self.slopes()[-1], out)
        return float(out) if out.ndim == 0 else out

    def inverse(self) -> "TimeMap":
        return TimeMap(self.knots_out, self.knots_in)


def random_time_map(rng: np.random.Generator, duration: float,
                    slope_range: tuple[float, float] = (0.8, 1.25),
                    segment_s: float = 5.0) -> TimeMap:
    """Random tempo curve with per-segment slopes drawn from slope_range."""
    n_seg = max(1, int(np.ceil(duration / segment_s)))
    xi = [0.0]
    yo = [0.0]
    for _ in range(n_seg):
        slope = float(rng.uniform(*slope_range))
        xi.append(xi[-1] + segment_s)
        yo.append(yo[-1] + segment_s * slope)
    return TimeMap(tuple(xi), tuple(yo))


@dataclass(frozen=True)
class PerformanceSim:
    """Knobs for turning a score into a plausibly inconsistent performance."""

    tempo_curve: TimeMap = field(default_factory=lambda: TimeMap.identity())
    onset_jitter_std: float = 0.0
    insert_rate: float = 0.0
    delete_rate: float = 0.0
    trill_swap_rate: float = 0.0
    duration_noise: float = 0.0
    insert_burst_max: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        slopes = self.tempo_curve.slopes()
        if slopes.min() < 0.7 or slopes.max() > 1.3:
            raise ValueError(f"tempo slopes must lie in [0.7, 1.3], got "
                             f"[{slopes.min():.3g}, {slopes.max():.3g}]")
        for name in ("insert_rate", "delete_rate", "trill_swap_rate"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.onset_jitter_std < 0 or not 0 <= self.duration_noise <= 1:
            raise ValueError("bad jitter or duration noise")


def gen_score(n_notes: int, pitch_range: tuple[int, int] = (60, 72), polyphony: int = 3,
              seed: int = 0, instrument_count: int = 1,
              gap_range: tuple[float, float] = (0.04, 0.30),
              dur_range: tuple[float, float] = (0.15, 0.70)) -> NoteSequence:
    """Deterministic random score; at most `polyphony` simultaneous notes and
    never two overlapping notes of the same pitch."""
    if n_notes < 1:
        raise ValueError("need at least one note")
    lo, hi = pitch_range
    if not PITCH_MIN <= lo < hi <= PITCH_MAX + 1:
        raise ValueError(f"pitch range {pitch_range} outside [{PITCH_MIN}, {PITCH_MAX + 1}]")
    rng = np.random.default_rng(seed)
    notes: list[NoteEvent] = []
    cursor = 0.0
    for _ in range(n_notes):
        onset = cursor + float(rng.uniform(*gap_range))
        dur = float(rng.uniform(*dur_range))
        active = [n for n in notes if n.offset_s > onset]
        while len(active) >= polyphony:
            onset = min(n.offset_s for n in active) + 0.01
            active = [n for n in notes if n.offset_s > onset]
        taken = {n.pitch for n in active}
        avail = [p for p in range(lo, hi) if p not in taken]
        if not avail:
            onset = min(n.offset_s for n in active) + 0.01
            taken = {n.pitch for n in notes if n.offset_s > onset}
            avail = [p for p in range(lo, hi) if p not in taken]
        pitch = avail[int(rng.integers(len(avail)))]
        inst = int(rng.integers(instrument_count)) if instrument_count > 1 else None
        notes.append(NoteEvent(pitch, onset, onset + dur, inst))
        cursor = onset
    return NoteSequence.from_notes(notes, instrument_count)


def simulate_performance(score: NoteSequence, sim: PerformanceSim,
                         ) -> tuple[NoteSequence, TimeMap]:
    """Warp and perturb a score into a 'real performance'.

    Per note, in a fixed draw order (so seeded replays can predict every
    decision): delete?, onset jitter, duration noise, insert?. Surviving
    adjacent pairs may then swap onsets (trills). Returns the performance and
    the exact tempo map for ground-truth evaluation.
    """
    rng = np.random.default_rng(sim.seed)
    curve = sim.tempo_curve
    kept: list[NoteEvent] = []
    inserted: list[NoteEvent] = []
    for note in score.notes:
        if rng.uniform() < sim.delete_rate:
            continue
        onset = curve(note.onset_s) + float(rng.normal(0.0, sim.onset_jitter_std)) \
            if sim.onset_jitter_std > 0 else curve(note.onset_s)
        onset = max(0.0, onset)
        dur = curve(note.offset_s) - curve(note.onset_s)
        if sim.duration_noise > 0:
            dur *= 1.0 + float(rng.uniform(-sim.duration_noise, sim.duration_noise))
        kept.append(replace(note, onset_s=onset, offset_s=onset + max(dur, MIN_DURATION_S)))
        if rng.uniform() < sim.insert_rate:
            burst = int(rng.integers(1, sim.insert_burst_max + 1))
            at = onset
            for _ in range(burst):
                at += float(rng.uniform(0.05, 0.25))
                pitch = int(rng.integers(*_safe_pitch_bounds(score)))
                idur = float(rng.uniform(0.05, 0.2))
                inserted.append(NoteEvent(pitch, at, at + idur, note.instrument))

    i = 0
    while i < len(kept) - 1:
        if rng.uniform() < sim.trill_swap_rate:
            a, b = kept[i], kept[i + 1]
            kept[i] = replace(a, onset_s=b.onset_s, offset_s=b.onset_s + a.duration)
            kept[i + 1] = replace(b, onset_s=a.onset_s, offset_s=a.onset_s + b.duration)
            i += 2
        else:
            i += 1
    return NoteSequence.from_notes(kept + inserted, score.instrument_count), curve


def _safe_pitch_bounds(seq: NoteSequence) -> tuple[int, int]:
    pitches = [n.pitch for n in seq.notes] or [60]
    return min(pitches), max(pitches) + 1


@dataclass(frozen=True)
class OracleNoise:
    """Imperfection model for the stand-in transcriber.

    fidelity blends each true cell between pure noise (0) and clean truth (1);
    miss_rate silences whole notes; fp_rate sprays confident false cells.
    """

    miss_rate: float = 0.0
    fp_rate: float = 0.0
    prob_noise_std: float = 0.0
    fidelity: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("miss_rate", "fp_rate", "fidelity"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.prob_noise_std < 0:
            raise ValueError("prob_noise_std must be >= 0")


def oracle_predict(performance: NoteSequence, clock: FrameClock, noise: OracleNoise,
                   length_frames: Optional[int] = None,
                   equivariant: bool = False) -> ActivationStack:
    """Transcriber-like probability stack for a known performance.

    Every random draw is made per note in sequence order with a count that
    depends only on note duration, never on pitch, so in `equivariant` mode
    (false positives spawned relative to notes instead of sprayed on the
    grid) transposing the performance transposes the output exactly, as long
    as nothing lands outside the keyboard.
    """
    t_total = length_frames or needed_frames(performance, clock) + 1
    shape = (t_total, performance.n_classes)
    planes = [np.zeros(shape, np.float64) for _ in range(3)]
    rng = np.random.default_rng(noise.seed)

    def paint(note: NoteEvent) -> None:
        on_f, off_f = note_frames(note, clock)
        if on_f >= t_total:
            return
        off_f = min(off_f, t_total - 1)
        c = performance.class_of(note)
        spans = ((0, [on_f]), (1, range(on_f, off_f)), (2, [off_f]))
        for head, frames_at in spans:
            for t in frames_at:
                v = min(max(1.0 - abs(rng.normal(0.0, noise.prob_noise_std)), 0.0), 1.0)
                value = noise.fidelity * v + (1.0 - noise.fidelity) * rng.uniform()
                planes[head][t, c] = max(planes[head][t, c], value)

    ghosts: list[NoteEvent] = []
    for note in performance.notes:
        missed = rng.uniform() < noise.miss_rate
        if equivariant and noise.fp_rate > 0:
            # expected false content scaled to the note's footprint
            dur_frames = max(note_frames(note, clock)[1] - note_frames(note, clock)[0], 1)
            p_ghost = min(1.0, noise.fp_rate * dur_frames * 12)
            if rng.uniform() < p_ghost:
                delta = int(rng.integers(1, 7)) * (1 if rng.uniform() < 0.5 else -1)
                offset = float(rng.uniform(-0.3, 0.3))
                dur = float(rng.uniform(0.05, 0.2))
                pitch = note.pitch + delta
                start = max(0.0, note.onset_s + offset)
                if PITCH_MIN <= pitch <= PITCH_MAX:
                    ghosts.append(NoteEvent(pitch, start, start + dur, note.instrument))
        if not missed:
            paint(note)
    for ghost in ghosts:
        paint(ghost)

    if not equivariant and noise.fp_rate > 0:
        for plane in planes:
            hits = rng.uniform(size=shape) < noise.fp_rate
            values = rng.uniform(0.3, 1.0, size=shape)
            np.maximum(plane, np.where(hits, values, 0.0), out=plane)

    return ActivationStack(*(p.astype(np.float32) for p in planes),
                           clock=clock, instrument_count=performance.instrument_count)


def make_piece(piece_id: str, score: NoteSequence, performance: NoteSequence,
               clock: FrameClock, seed: int = 0) -> Piece:
    """Bundle a score/performance pair for the EM driver; the performance
    rides along as the opaque handle (features, oracle truth)."""
    return Piece(piece_id, score, clock, needed_frames(performance, clock) + 1,
                 seed=seed, handle=performance)


class ScheduledOracleTranscriber(Transcriber):
    """Oracle whose fidelity follows a schedule, advancing once per train call.

    Stands in for a transcriber that genuinely improves between labelings;
    predictions are deterministic per (piece, schedule position).
    """

    def __init__(self, noise: OracleNoise, fidelities: Sequence[float],
                 equivariant: bool = False):
        if not fidelities:
            raise ValueError("need at least one fidelity value")
        self.noise = noise
        self.fidelities = tuple(fidelities)
        self.round = 0
        self.equivariant = equivariant

    def predict(self, piece: Piece) -> ActivationStack:
        fidelity = self.fidelities[min(self.round, len(self.fidelities) - 1)]
        noise = replace(self.noise, fidelity=fidelity,
                        seed=self.noise.seed + 7919 * piece.seed)
        return oracle_predict(piece.handle, piece.clock, noise,
                              length_frames=piece.n_frames,
                              equivariant=self.equivariant)

    def train(self, examples: Sequence[TrainExample], steps: int) -> None:
        self.round += 1
