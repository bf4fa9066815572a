"""Octave-projected local descriptors for alignment.

Each frame's 88*I head activations are combined with onset-dominant weights
and folded to 12 pitch classes by maximum over octaves and instruments,
keeping the quadratic alignment cheap.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import ActivationStack, PITCH_COUNT, PITCH_MIN, TargetRoll

N_PITCH_CLASSES = 12


@dataclass(frozen=True)
class DescriptorWeights:
    """Per-head mixing weights. The defaults make onsets dominate alignment;
    swap onset/frame for the frame-weighted variant."""

    onset: float = 100.0
    frame: float = 0.01
    offset: float = 0.001

    def __post_init__(self) -> None:
        if min(self.onset, self.frame, self.offset) < 0:
            raise ValueError("descriptor weights must be nonnegative")
        if self.onset == self.frame == self.offset == 0:
            raise ValueError("at least one descriptor weight must be positive")


# column groups of the T x C matrix folding onto each pitch class
def _fold_groups(n_classes: int) -> list[np.ndarray]:
    pitches = PITCH_MIN + np.arange(n_classes) % PITCH_COUNT
    return [np.flatnonzero(pitches % N_PITCH_CLASSES == pc) for pc in range(N_PITCH_CLASSES)]


def build_descriptors(stack: Union[ActivationStack, TargetRoll],
                      weights: DescriptorWeights = DescriptorWeights()) -> np.ndarray:
    """Weighted-sum-then-fold descriptors, shape (T, 12), float64.

    Works on probability stacks and on binary target rolls alike; the weighted
    sum is computed per cell first, then each pitch class takes the maximum
    over all octaves and instruments. Values are snapped to a 1/1024 grid so
    downstream distance sums are exact (see dtw.quantize_descriptors).
    """
    onset, frame, offset = stack.planes()
    raw = (weights.onset * onset.astype(np.float64)
           + weights.frame * frame.astype(np.float64)
           + weights.offset * offset.astype(np.float64))
    out = np.zeros((raw.shape[0], N_PITCH_CLASSES), np.float64)
    for pc, cols in enumerate(_fold_groups(raw.shape[1])):
        out[:, pc] = raw[:, cols].max(axis=1)
    return np.round(out * 1024.0) / 1024.0
