"""A tiny trainable transcriber for desk-scale end-to-end runs.

Features stand in for audio: each active pitch stamps a fixed 12-bin harmonic
template at its key position in an 88+11-wide spectrum block (one block per
instrument), with an attack boost on the onset frame and a release bump on
the offset frame, plus Gaussian noise. Transposing a performance translates
its features, mirroring how a pitch shift moves a spectrogram.

The model is a frame-wise linear classifier per head trained with Adam on
masked binary cross-entropy.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import ActivationStack, FrameClock, NoteSequence, PITCH_COUNT, note_frames
from .em import Piece, TrainExample, Transcriber, TrainingDiverged

HARMONIC_TEMPLATE = np.array(
    [1.0, 0.0, 0.0, 0.0, 0.35, 0.0, 0.0, 0.6, 0.0, 0.0, 0.0, 0.25], np.float64)
ONSET_GAIN = 1.0
RELEASE_GAIN = 0.4
BLOCK_WIDTH = PITCH_COUNT + len(HARMONIC_TEMPLATE) - 1  # template fits at the top key


def feature_width(instrument_count: int) -> int:
    return BLOCK_WIDTH * instrument_count


def render_features(perf: NoteSequence, clock: FrameClock, n_frames: int,
                    seed: int, noise_std: float = 0.05) -> np.ndarray:
    """Deterministic (T, F) float64 feature matrix for a performance."""
    feats = np.zeros((n_frames, feature_width(perf.instrument_count)), np.float64)
    for note in perf.notes:
        on_f, off_f = note_frames(note, clock)
        if on_f >= n_frames:
            continue
        off_f = min(off_f, n_frames - 1)
        base = (note.instrument or 0) * BLOCK_WIDTH + (note.pitch - 21)
        cols = slice(base, base + len(HARMONIC_TEMPLATE))
        feats[on_f:off_f, cols] += HARMONIC_TEMPLATE
        feats[on_f, cols] += ONSET_GAIN * HARMONIC_TEMPLATE
        feats[off_f, cols] += RELEASE_GAIN * HARMONIC_TEMPLATE
    rng = np.random.default_rng(seed)
    feats += rng.normal(0.0, noise_std, feats.shape)
    return feats


def shift_features(feats: np.ndarray, semitones: int, instrument_count: int) -> np.ndarray:
    """Translate each instrument block by `semitones` bins, zero-filling edges."""
    if semitones == 0:
        return feats
    blocks = feats.reshape(feats.shape[0], instrument_count, BLOCK_WIDTH)
    out = np.zeros_like(blocks)
    if semitones > 0:
        out[:, :, semitones:] = blocks[:, :, :BLOCK_WIDTH - semitones]
    else:
        out[:, :, :semitones] = blocks[:, :, -semitones:]
    return out.reshape(feats.shape)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class _AdamSlot:
    m: np.ndarray
    v: np.ndarray


class ToyTranscriber(Transcriber):
    """Per-head linear classifier over rendered features.

    `piece.handle` must be the performance NoteSequence; features are rendered
    on demand (seeded per piece) and cached. Deterministic for a fixed
    construction seed and call sequence.
    """

    def __init__(self, instrument_count: int = 1, seed: int = 0,
                 lr: float = 0.05, batch_frames: int = 256,
                 feature_noise_std: float = 0.05):
        self.instrument_count = instrument_count
        n_in = feature_width(instrument_count)
        n_out = PITCH_COUNT * instrument_count
        self.weights = [np.zeros((n_in, n_out)) for _ in range(3)]
        # activations are sparse; start biased toward silence
        self.biases = [np.full(n_out, -4.0) for _ in range(3)]
        self.lr = lr
        self.batch_frames = batch_frames
        self.feature_noise_std = feature_noise_std
        self.rng = np.random.default_rng(seed)
        self._adam = [_AdamSlot(np.zeros_like(w), np.zeros_like(w)) for w in self.weights] \
            + [_AdamSlot(np.zeros_like(b), np.zeros_like(b)) for b in self.biases]
        self._adam_t = 0
        self._feature_cache: dict[tuple, np.ndarray] = {}

    # -- features -----------------------------------------------------------
    def features(self, piece: Piece, shift: int = 0) -> np.ndarray:
        # only the unshifted rendering is cached; shifting is a cheap copy
        key = (piece.id, piece.seed, piece.n_frames)
        if key not in self._feature_cache:
            self._feature_cache[key] = render_features(
                piece.handle, piece.clock, piece.n_frames, piece.seed,
                self.feature_noise_std)
        base = self._feature_cache[key]
        return shift_features(base, shift, self.instrument_count) if shift else base

    # -- port ----------------------------------------------------------------
    def predict(self, piece: Piece) -> ActivationStack:
        feats = self.features(piece)
        planes = []
        for w, b in zip(self.weights, self.biases):
            planes.append(_sigmoid(feats @ w + b).astype(np.float32))
        return ActivationStack(*planes, clock=piece.clock,
                               instrument_count=self.instrument_count)

    def train(self, examples: Sequence[TrainExample], steps: int) -> None:
        if not examples:
            return
        for step in range(steps):
            ex = examples[int(self.rng.integers(len(examples)))]
            feats = self.features(ex.piece, ex.shift)
            t_total = feats.shape[0]
            start = int(self.rng.integers(max(1, t_total - self.batch_frames + 1)))
            rows = slice(start, min(start + self.batch_frames, t_total))
            loss = self._sgd_step(feats[rows], ex.labels, rows)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at step {step}")

    # -- internals -----------------------------------------------------------
    def _sgd_step(self, feats: np.ndarray, labels, rows: slice) -> float:
        grads_w, grads_b, loss = [], [], 0.0
        for h, (w, b) in enumerate(zip(self.weights, self.biases)):
            y = labels.targets[h][rows].astype(np.float64)
            mask = labels.masks[h][rows].astype(np.float64)
            denom = max(mask.sum(), 1.0)
            z = feats @ w + b
            p = _sigmoid(z)
            eps = 1e-12
            loss += float((mask * -(y * np.log(p + eps)
                                    + (1 - y) * np.log(1 - p + eps))).sum() / denom)
            dz = (p - y) * mask / denom
            grads_w.append(feats.T @ dz)
            grads_b.append(dz.sum(axis=0))
        self._adam_t += 1
        params = self.weights + self.biases
        grads = grads_w + grads_b
        b1, b2, eps = 0.9, 0.999, 1e-8
        t = self._adam_t
        for param, grad, slot in zip(params, grads, self._adam):
            slot.m = b1 * slot.m + (1 - b1) * grad
            slot.v = b2 * slot.v + (1 - b2) * grad * grad
            mhat = slot.m / (1 - b1 ** t)
            vhat = slot.v / (1 - b2 ** t)
            param -= self.lr * mhat / (np.sqrt(vhat) + eps)
        return loss
