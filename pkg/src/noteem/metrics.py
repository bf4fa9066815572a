"""Transcription scoring: note, frame, note-with-offset, and
note-with-instrument precision/recall/F1.

Note-level metrics use exact maximum-cardinality one-to-one matching (ties
resolved toward the smallest total onset distance), not greedy matching.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import NoteSequence, ShapeError, TargetRoll

# threshold grid from the offset-tolerance sweep: (seconds, fraction) pairs
OFFSET_SWEEP = (
    (0.05, 0.20), (0.25, 0.20), (0.50, 0.20), (1.00, 0.20), (2.00, 0.20),
    (0.05, 0.40), (0.05, 0.50), (0.05, 1.00), (0.05, 2.00), (0.05, 3.00),
)


@dataclass(frozen=True)
class MetricEntry:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: "MetricEntry") -> "MetricEntry":
        return MetricEntry(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "tp": self.tp, "fp": self.fp, "fn": self.fn}


@dataclass
class MetricsReport:
    """Named metric families for one piece or one aggregated corpus."""

    entries: dict[str, MetricEntry] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({k: v.as_dict() for k, v in self.entries.items()},
                          indent=2, sort_keys=True)

    def to_table(self) -> str:
        width = max((len(k) for k in self.entries), default=6)
        lines = [f"{'metric':<{width}}  {'P':>7} {'R':>7} {'F1':>7} {'tp':>6} {'fp':>6} {'fn':>6}"]
        for name, e in self.entries.items():
            lines.append(f"{name:<{width}}  {e.precision:7.4f} {e.recall:7.4f} "
                         f"{e.f1:7.4f} {e.tp:6d} {e.fp:6d} {e.fn:6d}")
        return "\n".join(lines)


def _match_counts(ref: NoteSequence, est: NoteSequence, feasible: np.ndarray,
                  onset_cost: np.ndarray) -> MetricEntry:
    """Maximum-cardinality matching over the feasibility matrix.

    Solved as an assignment problem where an infeasible pairing costs far more
    than any arrangement of feasible ones, so minimizing total cost maximizes
    the number of feasible pairs and, among those, minimizes onset distance.
    """
    n_ref, n_est = feasible.shape
    if n_ref == 0 or n_est == 0 or not feasible.any():
        return MetricEntry(0, n_est, n_ref)
    big = 1e6
    cost = np.where(feasible, onset_cost, big)
    rows, cols = linear_sum_assignment(cost)
    tp = int(feasible[rows, cols].sum())
    return MetricEntry(tp, n_est - tp, n_ref - tp)


def _note_arrays(seq: NoteSequence):
    pitch = np.array([n.pitch for n in seq])
    onset = np.array([n.onset_s for n in seq])
    offset = np.array([n.offset_s for n in seq])
    return pitch, onset, offset


def note_metrics(ref: NoteSequence, est: NoteSequence, onset_tol: float = 0.05) -> MetricEntry:
    """Pitch must match exactly and onsets agree within `onset_tol` seconds."""
    if onset_tol <= 0:
        raise ValueError("onset tolerance must be positive")
    if not len(ref) or not len(est):
        return MetricEntry(0, len(est), len(ref))
    rp, ro, _ = _note_arrays(ref)
    ep, eo, _ = _note_arrays(est)
    onset_diff = np.abs(ro[:, None] - eo[None, :])
    feasible = (rp[:, None] == ep[None, :]) & (onset_diff <= onset_tol)
    return _match_counts(ref, est, feasible, onset_diff)


def note_with_offset_metrics(ref: NoteSequence, est: NoteSequence,
                             onset_tol: float = 0.05, offset_tol_s: float = 0.05,
                             offset_tol_pct: float = 0.20) -> MetricEntry:
    """Additionally requires offsets within max(offset_tol_s, pct * ref duration)."""
    if min(onset_tol, offset_tol_s, offset_tol_pct) <= 0:
        raise ValueError("tolerances must be positive")
    if not len(ref) or not len(est):
        return MetricEntry(0, len(est), len(ref))
    rp, ro, roff = _note_arrays(ref)
    ep, eo, eoff = _note_arrays(est)
    onset_diff = np.abs(ro[:, None] - eo[None, :])
    offset_diff = np.abs(roff[:, None] - eoff[None, :])
    allowed = np.maximum(offset_tol_s, offset_tol_pct * (roff - ro))[:, None]
    feasible = (rp[:, None] == ep[None, :]) & (onset_diff <= onset_tol) & (offset_diff <= allowed)
    return _match_counts(ref, est, feasible, onset_diff)


def offset_sweep(ref: NoteSequence, est: NoteSequence, onset_tol: float = 0.05,
                 grid: Sequence[tuple[float, float]] = OFFSET_SWEEP) -> MetricsReport:
    """Note-with-offset metrics across the tolerance grid."""
    report = MetricsReport()
    for tol_s, tol_pct in grid:
        entry = note_with_offset_metrics(ref, est, onset_tol, tol_s, tol_pct)
        report.entries[f"note_with_offset({tol_s:g}s,{tol_pct:.0%})"] = entry
    return report


def note_with_instrument_metrics(ref: NoteSequence, est: NoteSequence,
                                 onset_tol: float = 0.05) -> MetricEntry:
    """As note_metrics, with instrument equality added to the match predicate."""
    for name, seq in (("reference", ref), ("estimate", est)):
        if any(n.instrument is None for n in seq):
            raise ValueError(f"{name} notes lack instrument ids")
    if not len(ref) or not len(est):
        return MetricEntry(0, len(est), len(ref))
    rp, ro, _ = _note_arrays(ref)
    ep, eo, _ = _note_arrays(est)
    ri = np.array([n.instrument for n in ref])
    ei = np.array([n.instrument for n in est])
    onset_diff = np.abs(ro[:, None] - eo[None, :])
    feasible = ((rp[:, None] == ep[None, :]) & (ri[:, None] == ei[None, :])
                & (onset_diff <= onset_tol))
    return _match_counts(ref, est, feasible, onset_diff)


def frame_metrics(ref: TargetRoll, est: TargetRoll) -> MetricEntry:
    """Cell-wise comparison of the frame planes."""
    if ref.frame.shape != est.frame.shape:
        raise ShapeError(f"frame planes differ: {ref.frame.shape} vs {est.frame.shape}")
    if ref.clock != est.clock:
        raise ShapeError("frame metrics need matching clocks")
    r = ref.frame.astype(bool)
    e = est.frame.astype(bool)
    tp = int((r & e).sum())
    return MetricEntry(tp, int(e.sum()) - tp, int(r.sum()) - tp)


def evaluate_notes(ref: NoteSequence, est: NoteSequence,
                   families: Sequence[str] = ("note", "frame"),
                   onset_tol: float = 0.05,
                   ref_roll: Optional[TargetRoll] = None,
                   est_roll: Optional[TargetRoll] = None) -> MetricsReport:
    """Score the requested metric families into one report."""
    report = MetricsReport()
    for family in families:
        if family == "note":
            report.entries["note"] = note_metrics(ref, est, onset_tol)
        elif family == "offset":
            report.entries["note_with_offset"] = note_with_offset_metrics(ref, est, onset_tol)
        elif family == "instrument":
            report.entries["note_with_instrument"] = note_with_instrument_metrics(ref, est, onset_tol)
        elif family == "frame":
            if ref_roll is None or est_roll is None:
                continue
            report.entries["frame"] = frame_metrics(ref_roll, est_roll)
        else:
            raise ValueError(f"unknown metric family {family!r}")
    return report


def aggregate(entries: Sequence[MetricEntry]) -> dict[str, dict[str, float]]:
    """Micro (summed counts) and macro (averaged P/R/F1) corpus aggregation."""
    if not entries:
        raise ValueError("nothing to aggregate")
    micro = entries[0]
    for e in entries[1:]:
        micro = micro + e
    macro = {
        "precision": float(np.mean([e.precision for e in entries])),
        "recall": float(np.mean([e.recall for e in entries])),
        "f1": float(np.mean([e.f1 for e in entries])),
    }
    return {"micro": micro.as_dict(), "macro": macro}
