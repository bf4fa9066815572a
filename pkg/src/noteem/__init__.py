"""noteem: score-to-prediction alignment, loss-maskable labeling, and EM
training utilities for music transcription."""

from .core import (
    ActivationStack,
    FrameClock,
    NoteEvent,
    NoteSequence,
    TargetRoll,
    extract_notes,
    frame_of,
    rasterize,
    shift_labels,
)
from .descriptor import DescriptorWeights, build_descriptors
from .dtw import SingularReport, WarpPath, dtw_align, singular_points

__version__ = "0.1.0"

__all__ = [
    "ActivationStack",
    "DescriptorWeights",
    "FrameClock",
    "NoteEvent",
    "NoteSequence",
    "SingularReport",
    "TargetRoll",
    "WarpPath",
    "build_descriptors",
    "dtw_align",
    "extract_notes",
    "frame_of",
    "rasterize",
    "shift_labels",
    "singular_points",
    "__version__",
]
