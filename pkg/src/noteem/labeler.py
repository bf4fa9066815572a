"""Turn a warp path plus target roll and predictions into trainable labels.

The grid carries, per head, binary targets, per-cell loss masks, and a
provenance code explaining each cell. The pipeline order is fixed:
hierarchy-max assignment over the path, local-max timing refinement, then the
pseudo-label overlay.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Optional

import numpy as np

from .core import (
    ActivationStack,
    FrameClock,
    PITCH_COUNT,
    ShapeError,
    TargetRoll,
    shift_class_matrix,
)
from .dtw import SingularReport, WarpPath

ONSET, FRAME, OFFSET = 0, 1, 2
HEADS = ("onset", "frame", "offset")


class Provenance(IntEnum):
    ALIGNED = 0
    PSEUDO_POS = 1
    PSEUDO_NEG = 2
    SINGULAR_MASKED = 3
    UNKNOWN_MASKED = 4


_MASKED_CODES = (Provenance.SINGULAR_MASKED, Provenance.UNKNOWN_MASKED)


@dataclass(frozen=True)
class PseudoLabelConfig:
    """Confidence thresholds for labels taken directly from predictions."""

    t_pos: float = 0.75
    t_neg: float = 0.01
    enabled: bool = True

    def __post_init__(self) -> None:
        if not 0.5 < self.t_pos < 1:
            raise ValueError(f"t_pos must be in (0.5, 1), got {self.t_pos}")
        if not 0 <= self.t_neg < 0.5:
            raise ValueError(f"t_neg must be in [0, 0.5), got {self.t_neg}")


@dataclass(frozen=True)
class LabelGrid:
    """Per-head targets, loss masks, and provenance, each shaped (3, T, C).

    mask = 0 exactly where provenance is singular_masked or unknown_masked;
    those cells contribute nothing to the training loss.
    """

    targets: np.ndarray
    masks: np.ndarray
    provenance: np.ndarray
    clock: FrameClock = field(default_factory=FrameClock)
    instrument_count: int = 1

    def __post_init__(self) -> None:
        if not self.targets.shape == self.masks.shape == self.provenance.shape:
            raise ShapeError("targets, masks, and provenance must share a shape")
        if self.targets.ndim != 3 or self.targets.shape[0] != len(HEADS):
            raise ShapeError(f"expected (3, T, C) planes, got {self.targets.shape}")
        masked = np.isin(self.provenance, _MASKED_CODES)
        if not np.array_equal(self.masks == 0, masked):
            raise ValueError("mask=0 must coincide exactly with masked provenance codes")

    @property
    def n_frames(self) -> int:
        return self.targets.shape[1]

    @property
    def n_classes(self) -> int:
        return self.targets.shape[2]

    @classmethod
    def from_roll(cls, roll: TargetRoll) -> "LabelGrid":
        """Fully supervised grid: targets from the roll, every cell unmasked."""
        targets = np.stack(roll.planes()).astype(np.uint8)
        return cls(targets, np.ones_like(targets),
                   np.full_like(targets, Provenance.ALIGNED),
                   roll.clock, roll.instrument_count)

    def to_roll(self) -> TargetRoll:
        """Targets as a TargetRoll (the frame plane absorbs pseudo onsets)."""
        onset = self.targets[ONSET]
        return TargetRoll(onset, self.targets[FRAME] | onset, self.targets[OFFSET],
                          self.clock, self.instrument_count)

    def pitch_shift(self, semitones: int) -> "LabelGrid":
        """Translate every plane by `semitones` within each instrument block.

        Columns shifted in from beyond the keyboard carry no information and
        are masked (unknown) rather than asserted negative.
        """
        targets = np.empty_like(self.targets)
        masks = np.empty_like(self.masks)
        prov = np.empty_like(self.provenance)
        for h in range(len(HEADS)):
            targets[h], _ = shift_class_matrix(self.targets[h], semitones, self.instrument_count)
            masks[h], _ = shift_class_matrix(self.masks[h], semitones, self.instrument_count)
            shifted_known, _ = shift_class_matrix(
                np.ones_like(self.provenance[h]), semitones, self.instrument_count)
            moved, _ = shift_class_matrix(self.provenance[h], semitones, self.instrument_count)
            prov[h] = np.where(shifted_known == 1, moved, Provenance.UNKNOWN_MASKED)
        return LabelGrid(targets, masks, prov, self.clock, self.instrument_count)

    def provenance_counts(self) -> dict[str, int]:
        return {p.name.lower(): int(np.count_nonzero(self.provenance == p)) for p in Provenance}


def assign_labels(path: WarpPath, singular: SingularReport, roll: TargetRoll) -> LabelGrid:
    """Project roll activations through the warp onto the prediction timeline.

    Each non-singular source frame takes, per class, the highest-ranking
    activation (onset > frame > offset > none) over its mapped target frames.
    Singular frames are fully masked.
    """
    if path.n_target != roll.n_frames:
        raise ShapeError(
            f"path targets {path.n_target} frames but the roll has {roll.n_frames}")
    t_src = path.n_source
    n_classes = roll.n_classes

    level_src = np.zeros((t_src, n_classes), np.uint8)
    level_tgt = np.maximum(3 * roll.onset, np.maximum(2 * roll.frame, roll.offset)).astype(np.uint8)
    first, last = path.source_spans
    for t in range(t_src):
        level_src[t] = level_tgt[first[t]:last[t] + 1].max(axis=0)

    sing_rows = singular.union_mask(t_src)
    level_src[sing_rows] = 0

    targets = np.stack([
        (level_src == 3).astype(np.uint8),
        (level_src >= 2).astype(np.uint8),
        (level_src == 1).astype(np.uint8),
    ])
    masks = np.ones_like(targets)
    masks[:, sing_rows, :] = 0
    prov = np.full_like(targets, Provenance.ALIGNED)
    prov[:, sing_rows, :] = Provenance.SINGULAR_MASKED
    return LabelGrid(targets, masks, prov, roll.clock, roll.instrument_count)


def apply_pseudo_labels(grid: LabelGrid, stack: ActivationStack, cfg: PseudoLabelConfig,
                        protect_aligned_positives: bool = True) -> LabelGrid:
    """Overlay confidence-derived labels on an aligned grid.

    Cells above t_pos become positive and cells below t_neg negative on every
    head, both reclaiming singular-masked cells. On the onset head only,
    cells in (0.5, t_pos] that alignment did not mark positive are masked as
    unknown; the symmetric band below 0.5 is left alone. With
    `protect_aligned_positives` (the default), a low-confidence prediction
    never flips an aligned positive to negative.
    """
    if not cfg.enabled:
        return grid
    if stack.n_frames != grid.n_frames or stack.n_classes != grid.n_classes:
        raise ShapeError(f"stack {stack.onset.shape} does not match grid "
                         f"({grid.n_frames}, {grid.n_classes})")
    targets = grid.targets.copy()
    masks = grid.masks.copy()
    prov = grid.provenance.copy()
    for h, plane in enumerate(stack.planes()):
        positive_now = (targets[h] == 1) & (masks[h] == 1)

        neg = plane < cfg.t_neg
        if protect_aligned_positives:
            neg &= ~(positive_now & (prov[h] == Provenance.ALIGNED))
        targets[h][neg] = 0
        masks[h][neg] = 1
        prov[h][neg] = Provenance.PSEUDO_NEG

        if h == ONSET:
            unknown = (plane > 0.5) & (plane <= cfg.t_pos) & ~positive_now
            masks[h][unknown] = 0
            prov[h][unknown] = Provenance.UNKNOWN_MASKED

        pos = plane > cfg.t_pos
        targets[h][pos] = 1
        masks[h][pos] = 1
        prov[h][pos] = Provenance.PSEUDO_POS
    return replace(grid, targets=targets, masks=masks, provenance=prov)


def _sweep_once(target: np.ndarray, frame: np.ndarray, prob: np.ndarray,
                half: int, reanchor_frames: bool) -> None:
    """One inclusive local-max pass over every labeled event in `target`.

    Both the best left and best right neighbors within the window are marked
    when they strictly exceed the current cell; the original is cleared only
    if at least one neighbor won. Mutates `target` (and `frame` when
    re-anchoring onset runs) in place.
    """
    t_total = target.shape[0]
    moves = []  # (t, c, marks)
    for t, c in np.argwhere(target == 1):
        center = prob[t, c]
        marks = []
        lo = max(0, t - half)
        if t > lo:
            left = lo + int(np.argmax(prob[lo:t, c]))
            if prob[left, c] > center:
                marks.append(left)
        hi = min(t_total, t + half + 1)
        if hi > t + 1:
            right = t + 1 + int(np.argmax(prob[t + 1:hi, c]))
            if prob[right, c] > center:
                marks.append(right)
        if marks:
            moves.append((int(t), int(c), marks))
    for t, c, _ in moves:
        target[t, c] = 0
    for t, c, marks in moves:
        for s in marks:
            target[s, c] = 1
        if reanchor_frames:
            earliest = min(marks)
            if earliest < t:
                frame[earliest:t + 1, c] = 1
            else:
                frame[t:earliest, c] = 0
            for s in marks:
                frame[s, c] = 1


def local_max_adjust(grid: LabelGrid, stack: ActivationStack, window: int = 7,
                     sweeps: int = 3, adjust_offsets: bool = True) -> LabelGrid:
    """Nudge labeled onsets (and optionally offsets) onto local prediction maxima.

    Repeated `sweeps` times with a symmetric `window`; onset moves re-anchor
    the note's frame run so onsets always sit on frames.
    """
    if window % 2 == 0 or window < 1:
        raise ValueError(f"window must be odd and positive, got {window}")
    if stack.n_frames != grid.n_frames or stack.n_classes != grid.n_classes:
        raise ShapeError("stack shape does not match grid")
    half = (window - 1) // 2
    targets = grid.targets.copy()
    for _ in range(sweeps):
        _sweep_once(targets[ONSET], targets[FRAME], stack.onset, half, True)
    if adjust_offsets:
        for _ in range(sweeps):
            _sweep_once(targets[OFFSET], targets[FRAME], stack.offset, half, False)
    targets[FRAME] |= targets[ONSET]
    return replace(grid, targets=targets)


def threshold_grid(stack: ActivationStack, threshold: float = 0.5) -> LabelGrid:
    """Labels from thresholded confidence alone, no alignment involved."""
    targets = np.stack([(plane > threshold).astype(np.uint8) for plane in stack.planes()])
    targets[FRAME] |= targets[ONSET]
    prov = np.where(targets == 1, np.uint8(Provenance.PSEUDO_POS),
                    np.uint8(Provenance.PSEUDO_NEG))
    return LabelGrid(targets, np.ones_like(targets), prov,
                     stack.clock, stack.instrument_count)


def label_pipeline(path: WarpPath, singular: SingularReport, roll: TargetRoll,
                   stack: ActivationStack, pseudo: Optional[PseudoLabelConfig] = None,
                   window: int = 7, sweeps: int = 3, adjust_offsets: bool = True,
                   local_max: bool = True,
                   protect_aligned_positives: bool = True) -> LabelGrid:
    """assign -> local-max refine -> pseudo overlay, in the fixed order."""
    grid = assign_labels(path, singular, roll)
    if local_max:
        grid = local_max_adjust(grid, stack, window, sweeps, adjust_offsets)
    if pseudo is not None and pseudo.enabled:
        grid = apply_pseudo_labels(grid, stack, pseudo, protect_aligned_positives)
    return grid
