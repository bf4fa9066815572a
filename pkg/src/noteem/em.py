"""The expectation-maximization driver.

Repeats: predict each piece, align its score to the predictions, keep the
labeling when its normalized alignment cost beats the stored one (E-step);
then train the pluggable transcriber on the current labels with masked BCE
and pitch-shifted copies (M-step); until the mean cost settles.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Sequence

import numpy as np

from .core import ActivationStack, FrameClock, NoteSequence, needed_frames, rasterize
from .descriptor import DescriptorWeights, build_descriptors
from .dtw import dtw_align, singular_points
from .labeler import LabelGrid, PseudoLabelConfig, label_pipeline, threshold_grid

logger = logging.getLogger(__name__)

PITCH_SHIFTS = tuple(range(-5, 6))


class TrainingDiverged(RuntimeError):
    """Non-finite training loss; carries the offending step for diagnostics."""


@dataclass(frozen=True)
class Piece:
    """One corpus item: the unaligned score plus whatever the transcriber
    needs to produce predictions (`handle` is transcriber-specific)."""

    id: str
    score: NoteSequence
    clock: FrameClock
    n_frames: int
    seed: int = 0
    handle: Any = None


@dataclass(frozen=True)
class TrainExample:
    piece: Piece
    labels: LabelGrid
    shift: int = 0


class Transcriber(ABC):
    """Behavioral port for the model being trained.

    predict must be deterministic for fixed internal state; train must not
    mutate its inputs.
    """

    @abstractmethod
    def predict(self, piece: Piece) -> ActivationStack: ...

    @abstractmethod
    def train(self, examples: Sequence[TrainExample], steps: int) -> None: ...


class StackTranscriber(Transcriber):
    """Fixed predictions from precomputed stacks (external model outputs).

    `piece.handle` is the ActivationStack, or a path loaded lazily. Training
    is a no-op, so EM against this port converges after the second labeling.
    """

    def predict(self, piece: Piece) -> ActivationStack:
        if isinstance(piece.handle, ActivationStack):
            return piece.handle
        from .formats import read_stack
        return read_stack(piece.handle)

    def train(self, examples: Sequence[TrainExample], steps: int) -> None:
        pass


@dataclass(frozen=True)
class LabelingConfig:
    """Everything the E-step needs to turn predictions into a LabelGrid."""

    weights: DescriptorWeights = DescriptorWeights()
    w: int = 3
    w_prime: int = 100
    pseudo: PseudoLabelConfig = PseudoLabelConfig()
    local_max: bool = True
    window: int = 7
    sweeps: int = 3
    adjust_offsets: bool = True
    band: Optional[int] = None
    protect_aligned_positives: bool = True
    mode: str = "align"  # "align" or "threshold" (confidence-only baseline)
    threshold: float = 0.5


def label_piece(piece: Piece, stack: ActivationStack, cfg: LabelingConfig,
                apply_pseudo: bool = True) -> tuple[LabelGrid, float]:
    """Run the labeling pipeline for one piece; returns (grid, normalized cost)."""
    if cfg.mode == "threshold":
        return threshold_grid(stack, cfg.threshold), 0.0
    roll = rasterize(piece.score, piece.clock, needed_frames(piece.score, piece.clock))
    x = build_descriptors(stack, cfg.weights)
    y = build_descriptors(roll, cfg.weights)
    path = dtw_align(x, y, band=cfg.band)
    singular = singular_points(path, cfg.w, cfg.w_prime)
    grid = label_pipeline(
        path, singular, roll, stack,
        pseudo=cfg.pseudo if apply_pseudo else None,
        window=cfg.window, sweeps=cfg.sweeps, adjust_offsets=cfg.adjust_offsets,
        local_max=cfg.local_max,
        protect_aligned_positives=cfg.protect_aligned_positives)
    return grid, path.normalized_cost


@dataclass
class EmState:
    """Per-piece best labels and costs plus the labeling schedule."""

    labels: dict[str, Optional[LabelGrid]] = field(default_factory=dict)
    costs: dict[str, float] = field(default_factory=dict)
    iteration: int = 0
    pseudo_from_iteration: int = 0

    @classmethod
    def fresh(cls, pieces: Sequence[Piece], pseudo_from_iteration: int = 0) -> "EmState":
        return cls(labels={p.id: None for p in pieces},
                   costs={p.id: float("inf") for p in pieces},
                   pseudo_from_iteration=pseudo_from_iteration)

    def mean_cost(self) -> float:
        finite = [c for c in self.costs.values() if np.isfinite(c)]
        return float(np.mean(finite)) if finite else float("inf")


@dataclass(frozen=True)
class PieceResult:
    id: str
    cost: float
    replaced: bool
    error: Optional[str] = None


def e_step(state: EmState, pieces: Sequence[Piece], transcriber: Transcriber,
           cfg: LabelingConfig, jobs: int = 1) -> list[PieceResult]:
    """Label every piece and keep strictly better labelings.

    In threshold mode there is no alignment cost, so labels are refreshed
    unconditionally. Pieces whose alignment fails keep their previous labels
    and are reported, not fatal.
    """
    apply_pseudo = cfg.pseudo.enabled and state.iteration >= state.pseudo_from_iteration

    def work(piece: Piece):
        stack = transcriber.predict(piece)
        return label_piece(piece, stack, cfg, apply_pseudo)

    results: list[PieceResult] = []
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        outcomes = list(pool.map(lambda p: _safe(work, p), pieces))
    for piece, outcome in zip(pieces, outcomes):
        if isinstance(outcome, Exception):
            logger.warning("piece %s skipped: %s", piece.id, outcome)
            results.append(PieceResult(piece.id, state.costs[piece.id], False, str(outcome)))
            continue
        grid, cost = outcome
        take = cost < state.costs[piece.id] if cfg.mode == "align" else True
        if take:
            state.labels[piece.id] = grid
            state.costs[piece.id] = cost
        results.append(PieceResult(piece.id, cost, take))
    return results


def _safe(fn, piece):
    try:
        return fn(piece)
    except Exception as exc:  # reported per piece by the caller
        return exc


def m_step(state: EmState, pieces: Sequence[Piece], transcriber: Transcriber,
           steps_per_piece: int = 90, shifts: Sequence[int] = PITCH_SHIFTS) -> Transcriber:
    """Train on the stored labels, expanded with pitch-shifted copies.

    Labels for the copies come from shifting the stored grid, never from
    re-aligning; pieces that never got labels are excluded with a warning.
    """
    examples: list[TrainExample] = []
    for piece in pieces:
        grid = state.labels.get(piece.id)
        if grid is None:
            logger.warning("piece %s has no labels yet; skipped in training", piece.id)
            continue
        for k in shifts or (0,):
            examples.append(TrainExample(piece, grid.pitch_shift(k) if k else grid, k))
    if examples:
        transcriber.train(examples, steps_per_piece * len(pieces))
    return transcriber


@dataclass
class IterationStats:
    iteration: int
    labeled: bool
    mean_cost: float
    costs: dict[str, float]


@dataclass(frozen=True)
class RunConfig:
    labeling: LabelingConfig = LabelingConfig()
    max_iterations: int = 2
    label_iterations: Optional[tuple[int, ...]] = None  # default: {0, midpoint}
    eps: float = 1e-4
    steps_per_piece: int = 90
    shifts: Sequence[int] = PITCH_SHIFTS
    pseudo_from_iteration: int = 0
    jobs: int = 1

    def schedule(self) -> tuple[int, ...]:
        if self.label_iterations is not None:
            return tuple(sorted(set(self.label_iterations)))
        if self.max_iterations == 1:
            return (0,)
        return (0, self.max_iterations // 2)


@dataclass
class RunResult:
    transcriber: Transcriber
    state: EmState
    history: list[IterationStats]
    converged: bool


def run(pieces: Sequence[Piece], transcriber: Transcriber, config: RunConfig) -> RunResult:
    """Alternate E and M steps per the labeling schedule until the mean
    normalized cost moves less than eps between labelings."""
    if not pieces:
        raise ValueError("cannot run on an empty corpus")
    state = EmState.fresh(pieces, config.pseudo_from_iteration)
    schedule = config.schedule()
    history: list[IterationStats] = []
    prev_mean: Optional[float] = None
    converged = False

    for iteration in range(config.max_iterations):
        state.iteration = iteration
        labeled = iteration in schedule
        if labeled:
            e_step(state, pieces, transcriber, config.labeling, config.jobs)
        mean = state.mean_cost()
        history.append(IterationStats(iteration, labeled, mean, dict(state.costs)))
        m_step(state, pieces, transcriber, config.steps_per_piece, config.shifts)
        if labeled and prev_mean is not None and abs(mean - prev_mean) < config.eps:
            converged = True
            break
        if labeled:
            prev_mean = mean
    return RunResult(transcriber, state, history, converged)
