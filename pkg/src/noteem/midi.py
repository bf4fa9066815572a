"""Standard MIDI File ingestion: chunk/event parsing, tempo integration, and
conversion of timed events into NoteSequence.

Supports SMF format 0/1 with metrical (ticks-per-quarter) timing. Note-on with
velocity 0 is normalized to note-off at parse time; running status is honored;
events outside the supported set are skipped with correct length handling.
"""
from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .core import InputError, NoteEvent, NoteSequence, PITCH_MAX, PITCH_MIN

DEFAULT_TEMPO = 500_000  # microseconds per quarter note (120 bpm)
DRUM_CHANNEL = 9


class MidiParseError(InputError):
    """Malformed SMF data; `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass(frozen=True)
class MidiEvent:
    """One timed event extracted from a track.

    kind is one of "note_on", "note_off", "program", "tempo"; for tempo events
    `a` holds microseconds per quarter and channel is -1.
    """

    tick: int
    kind: str
    channel: int
    a: int
    b: int = 0


@dataclass
class TempoMap:
    """Set-tempo changes as (tick, microseconds per quarter), plus resolution."""

    ticks_per_quarter: int
    changes: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.changes or self.changes[0][0] != 0:
            self.changes.insert(0, (0, DEFAULT_TEMPO))
        ticks = [t for t, _ in self.changes]
        if any(b <= a for a, b in zip(ticks, ticks[1:])):
            raise ValueError("tempo change ticks must be strictly increasing")
        # cumulative seconds at each change point
        self._seconds = [0.0]
        for (t0, uspq), (t1, _) in zip(self.changes, self.changes[1:]):
            self._seconds.append(self._seconds[-1] + (t1 - t0) * uspq / (self.ticks_per_quarter * 1e6))
        self._ticks = ticks

    def seconds_at(self, tick: int) -> float:
        """Piecewise-linear time of an absolute tick."""
        i = bisect.bisect_right(self._ticks, tick) - 1
        t0, uspq = self.changes[i]
        return self._seconds[i] + (tick - t0) * uspq / (self.ticks_per_quarter * 1e6)


@dataclass(frozen=True)
class InstrumentMap:
    """General-MIDI program number -> instrument class id, or None to ignore.

    Channel-10 percussion is routed through `drum_class` (ignored by default).
    """

    program_to_class: dict[int, Optional[int]]
    class_count: int
    drum_class: Optional[int] = None

    def class_for(self, program: int, is_drum: bool = False) -> Optional[int]:
        if is_drum:
            return self.drum_class
        return self.program_to_class.get(program)

    def representative_program(self, class_id: int) -> int:
        """Lowest GM program mapping to a class (used when writing SMF)."""
        for program in sorted(self.program_to_class):
            if self.program_to_class[program] == class_id:
                return program
        raise ValueError(f"no program maps to class {class_id}")

    @classmethod
    def single(cls) -> "InstrumentMap":
        """Instrument-insensitive: every melodic program is class 0."""
        return cls({p: 0 for p in range(128)}, class_count=1)

    @classmethod
    def classical_12(cls) -> "InstrumentMap":
        """Twelve classes: the classical chamber/orchestral set plus guitar."""
        groups = {
            0: list(range(0, 6)) + [7],      # piano
            1: [6],                          # harpsichord
            2: list(range(24, 32)),          # guitar
            3: [40],                         # violin
            4: [41],                         # viola
            5: [42],                         # cello
            6: [43],                         # contrabass
            7: [60, 69],                     # horn / english horn
            8: [68],                         # oboe
            9: [70],                         # bassoon
            10: [71],                        # clarinet
            11: [72, 73],                    # flute / piccolo
        }
        mapping: dict[int, Optional[int]] = {}
        for class_id, programs in groups.items():
            for p in programs:
                mapping[p] = class_id
        return cls(mapping, class_count=12)


@dataclass(frozen=True)
class ParsedMidi:
    tracks: tuple[tuple[MidiEvent, ...], ...]
    tempo: TempoMap
    format: int


@dataclass
class IngestStats:
    dropped_pitch: int = 0
    dropped_unmapped: int = 0
    dangling_closed: int = 0
    stray_note_offs: int = 0


def _read_varlen(data: bytes, pos: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= len(data):
            raise MidiParseError("truncated variable-length quantity", pos)
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise MidiParseError("variable-length quantity longer than 4 bytes", pos)


_CHANNEL_DATA_LEN = {0x8: 2, 0x9: 2, 0xA: 2, 0xB: 2, 0xC: 1, 0xD: 1, 0xE: 2}


def _parse_track(data: bytes, start: int, end: int) -> tuple[MidiEvent, ...]:
    events: list[MidiEvent] = []
    pos = start
    tick = 0
    running_status: Optional[int] = None
    while pos < end:
        delta, pos = _read_varlen(data, pos)
        tick += delta
        if pos >= end:
            raise MidiParseError("event data past end of track chunk", pos)
        status = data[pos]
        if status & 0x80:
            pos += 1
        elif running_status is None:
            raise MidiParseError(f"data byte 0x{status:02x} without running status", pos)
        else:
            status = running_status

        if status == 0xFF:  # meta
            running_status = None
            if pos >= end:
                raise MidiParseError("truncated meta event", pos)
            meta_type = data[pos]
            length, pos = _read_varlen(data, pos + 1)
            payload = data[pos:pos + length]
            if len(payload) != length:
                raise MidiParseError("meta event payload truncated", pos)
            pos += length
            if meta_type == 0x51:
                if length != 3:
                    raise MidiParseError("set-tempo payload must be 3 bytes", pos - length)
                uspq = int.from_bytes(payload, "big")
                events.append(MidiEvent(tick, "tempo", -1, uspq))
            elif meta_type == 0x2F:
                break
        elif status in (0xF0, 0xF7):  # sysex: length-prefixed, skipped
            running_status = None
            length, pos = _read_varlen(data, pos)
            pos += length
            if pos > end:
                raise MidiParseError("sysex payload truncated", pos)
        else:
            kind = status >> 4
            channel = status & 0x0F
            n = _CHANNEL_DATA_LEN.get(kind)
            if n is None:
                raise MidiParseError(f"unexpected status byte 0x{status:02x}", pos - 1)
            if pos + n > end:
                raise MidiParseError("channel event data truncated", pos)
            d = data[pos:pos + n]
            pos += n
            running_status = status
            if kind == 0x9 and d[1] > 0:
                events.append(MidiEvent(tick, "note_on", channel, d[0], d[1]))
            elif kind == 0x8 or kind == 0x9:
                events.append(MidiEvent(tick, "note_off", channel, d[0], 0))
            elif kind == 0xC:
                events.append(MidiEvent(tick, "program", channel, d[0]))
            # other channel voice messages are skipped
    else:
        raise MidiParseError("track chunk missing end-of-track meta event", end)
    return tuple(events)


def parse_smf(data: bytes) -> ParsedMidi:
    """Parse an SMF byte string into per-track timed events plus a TempoMap."""
    if len(data) < 14 or data[:4] != b"MThd":
        raise MidiParseError("not a Standard MIDI File (missing MThd)", 0)
    header_len = int.from_bytes(data[4:8], "big")
    if header_len < 6:
        raise MidiParseError(f"MThd length {header_len} < 6", 4)
    fmt = int.from_bytes(data[8:10], "big")
    n_tracks = int.from_bytes(data[10:12], "big")
    division = int.from_bytes(data[12:14], "big")
    if fmt not in (0, 1):
        raise MidiParseError(f"SMF format {fmt} is not supported (only 0/1)", 8)
    if division & 0x8000:
        raise MidiParseError("SMPTE time division is not supported", 12)
    if division == 0:
        raise MidiParseError("ticks-per-quarter must be positive", 12)

    tracks: list[tuple[MidiEvent, ...]] = []
    pos = 8 + header_len
    while pos < len(data) and len(tracks) < n_tracks:
        if pos + 8 > len(data):
            raise MidiParseError("truncated chunk header", pos)
        chunk_type = data[pos:pos + 4]
        chunk_len = int.from_bytes(data[pos + 4:pos + 8], "big")
        body_start = pos + 8
        if body_start + chunk_len > len(data):
            raise MidiParseError(f"chunk length {chunk_len} exceeds file size", pos + 4)
        if chunk_type == b"MTrk":
            tracks.append(_parse_track(data, body_start, body_start + chunk_len))
        pos = body_start + chunk_len
    if len(tracks) != n_tracks:
        raise MidiParseError(f"header promised {n_tracks} tracks, found {len(tracks)}", pos)

    changes: dict[int, int] = {}
    for track in tracks:
        for ev in track:
            if ev.kind == "tempo":
                changes[ev.tick] = ev.a
    tempo = TempoMap(division, sorted(changes.items()))
    return ParsedMidi(tuple(tracks), tempo, fmt)


def to_note_sequence(parsed: ParsedMidi, imap: Optional[InstrumentMap] = None,
                     ) -> tuple[NoteSequence, IngestStats]:
    """Pair note-on/note-off events into NoteEvents with tempo-integrated times.

    Same-pitch overlaps pair FIFO per (channel, pitch). The instrument class
    comes from the channel's active program at note-on time. Notes still open
    at end of data are closed at the final tick and counted.
    """
    imap = imap or InstrumentMap.single()
    tempo = parsed.tempo
    stats = IngestStats()

    merged: list[MidiEvent] = []
    for track in parsed.tracks:
        merged.extend(track)
    order = sorted(range(len(merged)), key=lambda i: (merged[i].tick, i))

    program: dict[int, int] = {}
    open_notes: dict[tuple[int, int], deque] = {}
    notes: list[NoteEvent] = []
    last_tick = 0

    def close(channel: int, pitch: int, on_tick: int, off_tick: int,
              prog: int, velocity: int) -> None:
        klass = imap.class_for(prog, is_drum=channel == DRUM_CHANNEL)
        if klass is None:
            stats.dropped_unmapped += 1
            return
        if not PITCH_MIN <= pitch <= PITCH_MAX:
            stats.dropped_pitch += 1
            return
        onset = tempo.seconds_at(on_tick)
        offset = tempo.seconds_at(max(off_tick, on_tick + 1))
        notes.append(NoteEvent(pitch, onset, offset,
                               instrument=klass if imap.class_count > 1 else None,
                               velocity=velocity))

    for i in order:
        ev = merged[i]
        last_tick = max(last_tick, ev.tick)
        if ev.kind == "program":
            program[ev.channel] = ev.a
        elif ev.kind == "note_on":
            key = (ev.channel, ev.a)
            open_notes.setdefault(key, deque()).append((ev.tick, program.get(ev.channel, 0), ev.b))
        elif ev.kind == "note_off":
            key = (ev.channel, ev.a)
            pending = open_notes.get(key)
            if not pending:
                stats.stray_note_offs += 1
                continue
            on_tick, prog, vel = pending.popleft()
            close(ev.channel, ev.a, on_tick, ev.tick, prog, vel)

    for (channel, pitch), pending in open_notes.items():
        while pending:
            on_tick, prog, vel = pending.popleft()
            close(channel, pitch, on_tick, max(last_tick, on_tick + 1), prog, vel)
            stats.dangling_closed += 1

    return NoteSequence.from_notes(notes, imap.class_count), stats


def load_note_sequence(path, imap: Optional[InstrumentMap] = None,
                       ) -> tuple[NoteSequence, IngestStats]:
    """Read an SMF file from disk and convert it in one step."""
    with open(path, "rb") as fh:
        data = fh.read()
    return to_note_sequence(parse_smf(data), imap)
