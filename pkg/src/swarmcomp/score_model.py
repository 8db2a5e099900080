"""Symbolic score model: notes, voice lines, bars, pieces.

Every composition loop and every analysis exchanges :class:`Piece` objects.
Pitches are scientific pitch names (``"A4"``, ``"G#5"``) or the literal
``"rest"``; durations are quarter-note beats.
"""
from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

REST = "rest"
SAFE_DEFAULT_PITCH = "C4"
DEFAULT_BEATS = 4.0
DURATION_TOL = 1e-9
TICKS_PER_QUARTER = 480

_PITCH_CLASSES = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
_SHARP_NAMES = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"]
_PITCH_RE = re.compile(r"^([A-G])(#{1,2}|b{1,2})?(-?\d+)$")
_LOOSE_RE = re.compile(r"^([A-Ga-g])([#b]{0,2})(-?\d+)?$")


class ScoreError(ValueError):
    """Base class for score-model failures."""


class RestHasNoPitch(ScoreError):
    pass


class BarIndexError(ScoreError):
    pass


class PieceFormatError(ScoreError):
    pass


@dataclass(frozen=True)
class NoteEvent:
    pitch: str
    duration: float

    @property
    def is_rest(self) -> bool:
        return self.pitch == REST


@dataclass
class VoiceLine:
    instrument: str
    notes: list[NoteEvent] = field(default_factory=list)

    def total_beats(self) -> float:
        return math.fsum(n.duration for n in self.notes)


@dataclass
class Bar:
    bar_number: int
    voices: list[VoiceLine]
    rationale: str = ""

    def voice(self, instrument: str) -> VoiceLine | None:
        for v in self.voices:
            if v.instrument == instrument:
                return v
        return None


@dataclass
class PieceMetadata:
    key: str = "C major"
    time_signature: tuple[int, int] = (4, 4)
    tempo_bpm: float = 120.0

    @property
    def beats_per_bar(self) -> float:
        num, den = self.time_signature
        return num * 4.0 / den


@dataclass
class Piece:
    bars: list[Bar]
    metadata: PieceMetadata = field(default_factory=PieceMetadata)

    @property
    def instruments(self) -> list[str]:
        return [v.instrument for v in self.bars[0].voices] if self.bars else []

    def bar(self, number: int) -> Bar:
        return self.bars[number - 1]


# --------------------------------------------------------------------------
# pitches

def sanitize_note(token: str, default: str = SAFE_DEFAULT_PITCH) -> str:
    """Map any token to a valid pitch name, ``"rest"`` or ``default``.

    Accepts lowercase letters, unicode accidentals and stray whitespace.
    A missing octave means octave 4; octaves outside 0-8 are clamped.
    Never raises.
    """
    if not isinstance(token, str):
        return default
    t = token.strip()
    if t.lower() in ("rest", "r", "<rest>", "⟨rest⟩"):
        return REST
    t = (t.replace("♯", "#").replace("♭", "b").replace("𝄪", "##")
         .replace("𝄫", "bb").replace(" ", ""))
    m = _LOOSE_RE.match(t)
    if not m:
        return default
    letter, acc, octave = m.group(1).upper(), m.group(2), m.group(3)
    if acc not in ("", "#", "##", "b", "bb"):
        return default
    octv = 4 if octave is None else min(8, max(0, int(octave)))
    name = f"{letter}{acc}{octv}"
    try:
        pitch_to_midi(name)
    except ScoreError:
        # e.g. B#8 falls off the MIDI range
        return default
    return name


def pitch_to_midi(pitch: str) -> int:
    """Equal-temperament MIDI number with A4 = 69 (so C4 = 60)."""
    if pitch == REST:
        raise RestHasNoPitch("rest has no pitch")
    m = _PITCH_RE.match(pitch)
    if not m:
        raise ScoreError(f"bad pitch name {pitch!r}")
    letter, acc, octave = m.groups()
    semis = _PITCH_CLASSES[letter]
    if acc:
        semis += len(acc) if acc[0] == "#" else -len(acc)
    midi = 12 * (int(octave) + 1) + semis
    if not 0 <= midi <= 127:
        raise ScoreError(f"pitch {pitch!r} outside MIDI range")
    return midi


def midi_to_pitch(midi: int) -> str:
    if not 0 <= midi <= 127:
        raise ScoreError(f"MIDI number {midi} outside 0-127")
    return f"{_SHARP_NAMES[midi % 12]}{midi // 12 - 1}"


def is_valid_pitch(pitch: str) -> bool:
    if pitch == REST:
        return True
    try:
        pitch_to_midi(pitch)
    except ScoreError:
        return False
    return True


# --------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str

    def __str__(self) -> str:
        return f"{self.kind}({self.detail})"


def DurationSumMismatch(instrument: str, got: float, want: float) -> Violation:
    return Violation("DurationSumMismatch", f"{instrument}: {got:g} != {want:g}")


def validate_bar(bar: Bar, voices: Sequence[str],
                 beats: float = DEFAULT_BEATS) -> list[Violation]:
    """Return every violated bar invariant; an empty list means valid."""
    report: list[Violation] = []
    if bar.bar_number < 1:
        report.append(Violation("BadBarNumber", str(bar.bar_number)))
    seen: dict[str, int] = {}
    for line in bar.voices:
        if line.instrument not in voices:
            report.append(Violation("UnknownInstrument", line.instrument))
        seen[line.instrument] = seen.get(line.instrument, 0) + 1
        for note in line.notes:
            if not is_valid_pitch(note.pitch):
                report.append(Violation("BadPitch", f"{line.instrument}: {note.pitch!r}"))
            if not note.duration > 0:
                report.append(Violation("NonPositiveDuration",
                                        f"{line.instrument}: {note.duration!r}"))
        total = line.total_beats()
        if abs(total - beats) > DURATION_TOL:
            report.append(DurationSumMismatch(line.instrument, total, beats))
    for name in voices:
        if name not in seen:
            report.append(Violation("MissingVoice", name))
        elif seen[name] > 1:
            report.append(Violation("DuplicateVoice", name))
    return report


def assemble_piece(bars: Iterable[Bar], metadata: PieceMetadata | None = None) -> Piece:
    """Sort bars by number; numbers must be exactly 1..N."""
    ordered = sorted(bars, key=lambda b: b.bar_number)
    numbers = [b.bar_number for b in ordered]
    if numbers != list(range(1, len(ordered) + 1)):
        raise BarIndexError(f"bar numbers must cover 1..N exactly, got {numbers}")
    if ordered:
        names = [v.instrument for v in ordered[0].voices]
        for b in ordered[1:]:
            if sorted(v.instrument for v in b.voices) != sorted(names):
                raise BarIndexError(f"bar {b.bar_number} has a different voice set")
    return Piece(bars=ordered, metadata=metadata or PieceMetadata())


def validate_piece(piece: Piece, voices: Sequence[str] | None = None) -> list[Violation]:
    voices = list(voices) if voices is not None else piece.instruments
    beats = piece.metadata.beats_per_bar
    out: list[Violation] = []
    for i, bar in enumerate(piece.bars, start=1):
        if bar.bar_number != i:
            out.append(Violation("BarIndex", f"position {i} holds bar {bar.bar_number}"))
        out.extend(validate_bar(bar, voices, beats))
    return out


# --------------------------------------------------------------------------
# JSON

def piece_to_dict(piece: Piece) -> dict:
    md = piece.metadata
    return {
        "metadata": {
            "key": md.key,
            "time_signature": list(md.time_signature),
            "tempo_bpm": md.tempo_bpm,
        },
        "bars": [bar_to_dict(b) for b in piece.bars],
    }


def bar_to_dict(bar: Bar) -> dict:
    return {
        "bar_number": bar.bar_number,
        "rationale": bar.rationale,
        "voices": [
            {"instrument": v.instrument,
             "notes": [{"pitch": n.pitch, "duration": n.duration} for n in v.notes]}
            for v in bar.voices
        ],
    }


def bar_from_dict(d: dict) -> Bar:
    try:
        voices = [
            VoiceLine(v["instrument"],
                      [NoteEvent(str(n["pitch"]), float(n["duration"])) for n in v["notes"]])
            for v in d["voices"]
        ]
        return Bar(int(d["bar_number"]), voices, str(d.get("rationale", "")))
    except (KeyError, TypeError, ValueError) as exc:
        raise PieceFormatError(f"malformed bar: {exc}") from exc


def piece_from_dict(d: dict) -> Piece:
    try:
        md = d.get("metadata", {})
        ts = md.get("time_signature", [4, 4])
        if isinstance(ts, str):
            ts = [int(x) for x in ts.split("/")]
        metadata = PieceMetadata(str(md.get("key", "C major")),
                                 (int(ts[0]), int(ts[1])), float(md.get("tempo_bpm", 120.0)))
        bars = [bar_from_dict(b) for b in d["bars"]]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise PieceFormatError(f"malformed piece: {exc}") from exc
    return Piece(bars=bars, metadata=metadata)


def to_json(piece: Piece) -> str:
    return json.dumps(piece_to_dict(piece), indent=2)


def from_json(text: str | bytes) -> Piece:
    return piece_from_dict(json.loads(text))


# --------------------------------------------------------------------------
# MIDI (SMF type 1)

def _vlq(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def _chunk(tag: bytes, data: bytes) -> bytes:
    return tag + struct.pack(">I", len(data)) + data


def _ticks(beats: float) -> int:
    return int(round(beats * TICKS_PER_QUARTER))


def to_midi(piece: Piece, velocity: int = 80) -> bytes:
    """Type-1 SMF: a conductor track plus one track per voice."""
    md = piece.metadata
    tempo_us = int(round(60_000_000 / md.tempo_bpm))
    num, den = md.time_signature
    conductor = (
        b"\x00\xff\x51\x03" + tempo_us.to_bytes(3, "big")
        + b"\x00\xff\x58\x04" + bytes([num, int(math.log2(den)), 24, 8])
        + b"\x00\xff\x2f\x00"
    )
    tracks = [conductor]
    for ch, name in enumerate(piece.instruments):
        channel = ch % 16
        if channel == 9:
            channel = (ch + 1) % 16  # steer clear of the GM drum channel
        events = bytearray()
        label = name.encode("utf-8")
        events += b"\x00\xff\x03" + _vlq(len(label)) + label
        pending = 0
        elapsed = 0.0  # beats, accumulated exactly to avoid tick drift
        emitted = 0
        for bar in piece.bars:
            line = bar.voice(name)
            for note in (line.notes if line else []):
                start = _ticks(elapsed)
                elapsed += note.duration
                end = _ticks(elapsed)
                if note.is_rest:
                    continue
                midi = pitch_to_midi(note.pitch)
                events += _vlq(start - emitted) + bytes([0x90 | channel, midi, velocity])
                events += _vlq(end - start) + bytes([0x80 | channel, midi, 0])
                emitted = end
        pending = _ticks(elapsed) - emitted
        events += _vlq(max(pending, 0)) + b"\xff\x2f\x00"
        tracks.append(bytes(events))
    header = struct.pack(">HHH", 1, len(tracks), TICKS_PER_QUARTER)
    return _chunk(b"MThd", header) + b"".join(_chunk(b"MTrk", t) for t in tracks)


def _read_vlq(data: bytes, pos: int) -> tuple[int, int]:
    value = 0
    while True:
        b = data[pos]
        pos += 1
        value = (value << 7) | (b & 0x7F)
        if not b & 0x80:
            return value, pos


def _parse_track(data: bytes) -> tuple[str | None, list[tuple[int, int, int]], dict]:
    """Return (track name, [(start_tick, end_tick, midi)], meta)."""
    pos, tick, status = 0, 0, 0
    name = None
    open_notes: dict[int, int] = {}
    notes: list[tuple[int, int, int]] = []
    meta: dict = {"end": 0}
    while pos < len(data):
        delta, pos = _read_vlq(data, pos)
        tick += delta
        b = data[pos]
        if b & 0x80:
            status = b
            pos += 1
        if status == 0xFF:
            mtype = data[pos]
            length, pos = _read_vlq(data, pos + 1)
            payload = data[pos:pos + length]
            pos += length
            if mtype == 0x03:
                name = payload.decode("utf-8", "replace")
            elif mtype == 0x51:
                meta["tempo_us"] = int.from_bytes(payload, "big")
            elif mtype == 0x58:
                meta["time_signature"] = (payload[0], 2 ** payload[1])
            elif mtype == 0x2F:
                meta["end"] = tick
                break
            continue
        if status in (0xF0, 0xF7):
            length, pos = _read_vlq(data, pos)
            pos += length
            continue
        kind = status & 0xF0
        if kind in (0xC0, 0xD0):
            pos += 1
            continue
        a, v = data[pos], data[pos + 1]
        pos += 2
        if kind == 0x90 and v > 0:
            open_notes[a] = tick
        elif kind == 0x80 or (kind == 0x90 and v == 0):
            if a in open_notes:
                notes.append((open_notes.pop(a), tick, a))
    meta["end"] = max(meta["end"], tick)
    return name, notes, meta


def from_midi(data: bytes) -> Piece:
    """Read an SMF written by :func:`to_midi` (or any monophonic-per-track file).

    Gaps become rests; notes crossing a barline are split; overlapping
    notes within a track are truncated at the next onset.
    """
    if data[:4] != b"MThd":
        raise PieceFormatError("not a MIDI file")
    _, ntracks, division = struct.unpack(">HHH", data[8:14])
    if division & 0x8000:
        raise PieceFormatError("SMPTE time division not supported")
    pos = 14
    tempo_us, ts = 500_000, (4, 4)
    voices: list[tuple[str, list[tuple[int, int, int]]]] = []
    for index in range(ntracks):
        if data[pos:pos + 4] != b"MTrk":
            raise PieceFormatError("bad track chunk")
        length = struct.unpack(">I", data[pos + 4:pos + 8])[0]
        name, notes, meta = _parse_track(data[pos + 8:pos + 8 + length])
        pos += 8 + length
        tempo_us = meta.get("tempo_us", tempo_us)
        ts = meta.get("time_signature", ts)
        if notes or (name is not None and index > 0):
            voices.append((name or f"Track {index}", sorted(notes)))
    metadata = PieceMetadata(time_signature=ts, tempo_bpm=round(60_000_000 / tempo_us, 6))
    bar_ticks = metadata.beats_per_bar * division
    last = max((n[1] for _, ns in voices for n in ns), default=0)
    nbars = max(1, math.ceil(last / bar_ticks - 1e-9))

    def q(t: float) -> float:
        return round(t / division, 9)

    bars = [Bar(i + 1, []) for i in range(nbars)]
    for name, notes in voices:
        per_bar: list[list[NoteEvent]] = [[] for _ in range(nbars)]
        cursor = 0
        events = []
        for k, (s, e, midi) in enumerate(notes):
            if k + 1 < len(notes):
                e = min(e, notes[k + 1][0])
            if s < cursor:
                s = cursor
            if e <= s:
                continue
            if s > cursor:
                events.append((cursor, s, None))
            events.append((s, e, midi))
            cursor = e
        if cursor < nbars * bar_ticks:
            events.append((cursor, nbars * bar_ticks, None))
        for s, e, midi in events:
            while s < e - 1e-9:
                b = int(s // bar_ticks)
                cut = min(e, (b + 1) * bar_ticks)
                pitch = REST if midi is None else midi_to_pitch(midi)
                per_bar[b].append(NoteEvent(pitch, q(cut - s)))
                s = cut
        for b in range(nbars):
            bars[b].voices.append(VoiceLine(name, per_bar[b]))
    return Piece(bars=bars, metadata=metadata)


# --------------------------------------------------------------------------
# file helpers

def export(piece: Piece, fmt: str = "json") -> bytes:
    if fmt == "json":
        return (to_json(piece) + "\n").encode("utf-8")
    if fmt == "midi":
        return to_midi(piece)
    raise ValueError(f"unknown export format {fmt!r}")


def save(piece: Piece, path: str | Path) -> Path:
    path = Path(path)
    fmt = "midi" if path.suffix.lower() in (".mid", ".midi") else "json"
    path.write_bytes(export(piece, fmt))
    return path


def load(path: str | Path) -> Piece:
    path = Path(path)
    data = path.read_bytes()
    if path.suffix.lower() in (".mid", ".midi"):
        return from_midi(data)
    obj = json.loads(data)
    if "bars" not in obj and "piece" in obj:
        obj = obj["piece"]
    return piece_from_dict(obj)
