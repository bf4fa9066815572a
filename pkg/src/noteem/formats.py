"""All on-disk formats: SMF export, the binary stack/label containers, the
flat key=value run config, and the corpus manifest.

Binary containers are little-endian with fixed headers so any language can
parse them; see FORMATS.md at the repository root for byte-level layouts.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .core import ActivationStack, FrameClock, InputError, NoteSequence, PITCH_COUNT
from .labeler import HEADS, LabelGrid
from .midi import DEFAULT_TEMPO, DRUM_CHANNEL, InstrumentMap

STACK_MAGIC = b"NEM1"
LABEL_MAGIC = b"NEL1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIIIB")  # magic, version, fps num/den, T, C, head count


class FormatError(InputError):
    """A container file that cannot be decoded."""


def atomic_write(path: Union[str, Path], data: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see a
    half-written artifact."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Standard MIDI File export

def _varlen(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def _melodic_channel(class_id: int) -> int:
    channels = [c for c in range(16) if c != DRUM_CHANNEL]
    return channels[class_id % len(channels)]


def notes_to_smf(seq: NoteSequence, imap: Optional[InstrumentMap] = None,
                 ticks_per_quarter: int = 480, tempo: int = DEFAULT_TEMPO,
                 default_velocity: int = 64) -> bytes:
    """Serialize a NoteSequence as a format-0 SMF at a single fixed tempo.

    Each instrument class gets its own channel and that class's
    representative GM program, so parsing the bytes back with the same
    InstrumentMap recovers the class ids.
    """
    if imap is None:
        imap = InstrumentMap.single() if seq.instrument_count == 1 else InstrumentMap.classical_12()
    ticks_per_second = ticks_per_quarter * 1e6 / tempo

    # (tick, kind_rank, channel, pitch, payload); rank orders equal-tick events
    events: list[tuple[int, int, int, int, bytes]] = []
    events.append((0, 0, -1, -1, bytes((0xFF, 0x51, 0x03)) + tempo.to_bytes(3, "big")))
    used_classes = sorted({n.instrument or 0 for n in seq.notes})
    for class_id in used_classes:
        channel = _melodic_channel(class_id)
        program = imap.representative_program(class_id)
        events.append((0, 1, channel, -1, bytes((0xC0 | channel, program))))
    for note in seq.notes:
        channel = _melodic_channel(note.instrument or 0)
        velocity = note.velocity or default_velocity
        on_tick = round(note.onset_s * ticks_per_second)
        off_tick = max(round(note.offset_s * ticks_per_second), on_tick + 1)
        events.append((off_tick, 2, channel, note.pitch, bytes((0x80 | channel, note.pitch, 0))))
        events.append((on_tick, 3, channel, note.pitch, bytes((0x90 | channel, note.pitch, velocity))))

    events.sort(key=lambda e: e[:4])
    body = bytearray()
    tick = 0
    for ev_tick, _, _, _, payload in events:
        body += _varlen(ev_tick - tick)
        body += payload
        tick = ev_tick
    body += _varlen(0) + bytes((0xFF, 0x2F, 0x00))

    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, ticks_per_quarter)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def write_smf(seq: NoteSequence, path: Union[str, Path], **kwargs) -> None:
    atomic_write(path, notes_to_smf(seq, **kwargs))


# ---------------------------------------------------------------------------
# Probability stacks

def _pack_header(magic: bytes, clock: FrameClock, t: int, c: int) -> bytes:
    return _HEADER.pack(magic, FORMAT_VERSION, clock.sample_rate, clock.hop, t, c, len(HEADS))


def _unpack_header(data: bytes, magic: bytes, path) -> tuple[FrameClock, int, int, int]:
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    got_magic, version, num, den, t, c, heads = _HEADER.unpack_from(data)
    if got_magic != magic:
        raise FormatError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if heads != len(HEADS):
        raise FormatError(f"{path}: expected {len(HEADS)} heads, found {heads}")
    if den == 0 or num == 0:
        raise FormatError(f"{path}: invalid frame rate {num}/{den}")
    if c == 0 or c % PITCH_COUNT:
        raise FormatError(f"{path}: class count {c} is not a multiple of {PITCH_COUNT}")
    return FrameClock(num, den), t, c, _HEADER.size


def stack_to_bytes(stack: ActivationStack) -> bytes:
    planes = [np.ascontiguousarray(p, np.float32) for p in stack.planes()]
    for name, p in zip(HEADS, planes):
        if p.size and (not np.isfinite(p).all() or p.min() < 0 or p.max() > 1):
            raise FormatError(f"{name} plane has values outside [0, 1]")
    header = _pack_header(STACK_MAGIC, stack.clock, stack.n_frames, stack.n_classes)
    return header + b"".join(p.tobytes() for p in planes)


def stack_from_bytes(data: bytes, path="<bytes>") -> ActivationStack:
    clock, t, c, offset = _unpack_header(data, STACK_MAGIC, path)
    expected = len(HEADS) * t * c * 4
    if len(data) - offset != expected:
        raise FormatError(f"{path}: payload is {len(data) - offset} bytes, expected {expected}")
    planes = []
    for i in range(len(HEADS)):
        start = offset + i * t * c * 4
        plane = np.frombuffer(data, np.dtype("<f4"), count=t * c, offset=start).reshape(t, c)
        if plane.size and (not np.isfinite(plane).all() or plane.min() < 0 or plane.max() > 1):
            raise FormatError(f"{path}: {HEADS[i]} plane has values outside [0, 1]")
        planes.append(plane.copy())
    return ActivationStack(*planes, clock=clock, instrument_count=c // PITCH_COUNT)


def write_stack(stack: ActivationStack, path: Union[str, Path]) -> None:
    atomic_write(path, stack_to_bytes(stack))


def read_stack(path: Union[str, Path]) -> ActivationStack:
    return stack_from_bytes(Path(path).read_bytes(), path)


# ---------------------------------------------------------------------------
# Label grids

def _pack_bits(plane: np.ndarray) -> bytes:
    return np.packbits(plane.astype(np.uint8), axis=None).tobytes()


def _unpack_bits(data: bytes, offset: int, t: int, c: int) -> tuple[np.ndarray, int]:
    n_bytes = (t * c + 7) // 8
    bits = np.unpackbits(np.frombuffer(data, np.uint8, count=n_bytes, offset=offset))
    return bits[:t * c].reshape(t, c).astype(np.uint8), offset + n_bytes


def grid_to_bytes(grid: LabelGrid) -> bytes:
    header = _pack_header(LABEL_MAGIC, grid.clock, grid.n_frames, grid.n_classes)
    parts = [header]
    for h in range(len(HEADS)):
        parts.append(_pack_bits(grid.targets[h]))
        parts.append(_pack_bits(grid.masks[h]))
        parts.append(grid.provenance[h].astype(np.uint8).tobytes())
    return b"".join(parts)


def grid_from_bytes(data: bytes, path="<bytes>") -> LabelGrid:
    clock, t, c, offset = _unpack_header(data, LABEL_MAGIC, path)
    bit_bytes = (t * c + 7) // 8
    expected = len(HEADS) * (2 * bit_bytes + t * c)
    if len(data) - offset != expected:
        raise FormatError(f"{path}: payload is {len(data) - offset} bytes, expected {expected}")
    targets = np.empty((len(HEADS), t, c), np.uint8)
    masks = np.empty_like(targets)
    prov = np.empty_like(targets)
    for h in range(len(HEADS)):
        targets[h], offset = _unpack_bits(data, offset, t, c)
        masks[h], offset = _unpack_bits(data, offset, t, c)
        prov[h] = np.frombuffer(data, np.uint8, count=t * c, offset=offset).reshape(t, c)
        offset += t * c
    try:
        return LabelGrid(targets, masks, prov, clock, c // PITCH_COUNT)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_grid(grid: LabelGrid, path: Union[str, Path]) -> None:
    atomic_write(path, grid_to_bytes(grid))


def read_grid(path: Union[str, Path]) -> LabelGrid:
    return grid_from_bytes(Path(path).read_bytes(), path)


# ---------------------------------------------------------------------------
# Run configuration: flat "key = value" lines, # comments

def parse_config_text(text: str, path="<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise InputError(f"{path}:{lineno}: empty key")
        values[key] = value.strip()
    return values


def read_config(path: Union[str, Path]) -> dict[str, str]:
    return parse_config_text(Path(path).read_text(), str(path))


# ---------------------------------------------------------------------------
# Corpus manifest: one tab-separated row per piece

MANIFEST_COLUMNS = ("id", "role", "seed", "score", "truth", "stack")


@dataclass(frozen=True)
class PieceEntry:
    """One manifest row. Paths are relative to the manifest's directory.

    `truth` points at the piece's ground-truth label file, which doubles as
    the performance record (the toy transcriber re-derives its features from
    it); `stack` carries the oracle/transcriber predictions.
    """

    id: str
    role: str  # train | pretrain | holdout
    seed: int
    score: str
    truth: str
    stack: str

    def resolve(self, base: Path, attr: str) -> Path:
        return base / getattr(self, attr)


def write_manifest(entries: Sequence[PieceEntry], path: Union[str, Path]) -> None:
    lines = ["\t".join(MANIFEST_COLUMNS)]
    for e in entries:
        lines.append("\t".join(str(getattr(e, col)) for col in MANIFEST_COLUMNS))
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_manifest(path: Union[str, Path]) -> list[PieceEntry]:
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split("\t")) != MANIFEST_COLUMNS:
        raise InputError(f"{path}: first line must be {' '.join(MANIFEST_COLUMNS)}")
    entries = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != len(MANIFEST_COLUMNS):
            raise InputError(f"{path}:{lineno}: expected {len(MANIFEST_COLUMNS)} fields")
        entries.append(PieceEntry(fields[0], fields[1], int(fields[2]),
                                  fields[3], fields[4], fields[5]))
    return entries
