import json
import re
import string

import pytest
from hypothesis import given, strategies as st

from swarmcomp.score_model import (
    Bar, BarIndexError, NoteEvent, Piece, PieceMetadata, RestHasNoPitch, VoiceLine,
    assemble_piece, export, from_json, from_midi, is_valid_pitch, midi_to_pitch, pitch_to_midi,
    sanitize_note, to_json, to_midi, validate_bar, validate_piece,
)

from conftest import pieces, quarters

PITCH_RE = re.compile(r"^(rest|[A-G](#{1,2}|b{1,2})?\d)$")


def test_sanitize_examples():
    assert sanitize_note("A4") == "A4"
    assert sanitize_note("rest") == "rest"
    assert sanitize_note("Q#17") == "C4"
    assert sanitize_note("  e♭5 ") == "Eb5"
    assert sanitize_note("f♯3") == "F#3"
    assert sanitize_note("G12") == "G8"
    assert sanitize_note(None) == "C4"


@given(st.text(alphabet=string.printable + "♯♭𝄪𝄫⟨⟩", max_size=8))
def test_sanitize_total_and_idempotent(token):
    out = sanitize_note(token)
    assert PITCH_RE.match(out)
    assert is_valid_pitch(out)
    assert sanitize_note(out) == out


def test_pitch_anchors():
    assert pitch_to_midi("A4") == 69
    assert pitch_to_midi("C4") == 60
    assert pitch_to_midi("G#5") == 80
    with pytest.raises(RestHasNoPitch):
        pitch_to_midi("rest")


def test_pitch_offsets_match_enumeration():
    # walk semitones up from A4 by hand
    names = ["A", "A#", "B", "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#"]
    octave = 4
    for step in range(0, 40):
        name = names[step % 12]
        if name == "C" and step:
            octave += 1
        assert pitch_to_midi(f"{name}{octave}") == 69 + step


def test_midi_roundtrip_all():
    for m in range(128):
        assert pitch_to_midi(midi_to_pitch(m)) == m


def test_validate_bar_examples():
    assert validate_bar(quarters(), ["Piano"]) == []
    short = Bar(1, [VoiceLine("Piano", [NoteEvent("C4", 1.0)] * 3 + [NoteEvent("D4", 0.5)])])
    kinds = [v.kind for v in validate_bar(short, ["Piano"])]
    assert kinds == ["DurationSumMismatch"]
    assert "3.5" in str(validate_bar(short, ["Piano"])[0])
    low = quarters(instrument="piano")
    kinds = {v.kind for v in validate_bar(low, ["Piano"])}
    assert {"UnknownInstrument", "MissingVoice"} <= kinds


def test_validate_bar_bad_pitch():
    bar = Bar(1, [VoiceLine("Piano", [NoteEvent("H4", 4.0)])])
    assert [v.kind for v in validate_bar(bar, ["Piano"])] == ["BadPitch"]


def test_assemble_sorts_and_rejects():
    bars = [quarters(number=i) for i in (3, 1, 2)]
    assert [b.bar_number for b in assemble_piece(bars).bars] == [1, 2, 3]
    with pytest.raises(BarIndexError):
        assemble_piece([quarters(number=i) for i in (1, 1, 2)])
    with pytest.raises(BarIndexError):
        assemble_piece([quarters(number=i) for i in (1, 3)])


def test_empty_voice_json():
    p = Piece([Bar(1, [VoiceLine("Piano", [])])])
    d = json.loads(export(p, "json"))
    assert d["bars"][0]["voices"][0]["notes"] == []
    assert from_json(to_json(p)) == p


@given(pieces())
def test_json_roundtrip(p):
    assert from_json(to_json(p)) == p
    assert validate_piece(p) == []


def _read_vlq(data, i):
    v = 0
    while True:
        b = data[i]
        i += 1
        v = (v << 7) | (b & 0x7F)
        if not b & 0x80:
            return v, i


def decode_track_events(track: bytes):
    """Hand decoder for the note events of one MTrk body."""
    i, t, out, status = 0, 0, [], None
    while i < len(track):
        dt, i = _read_vlq(track, i)
        t += dt
        b = track[i]
        if b == 0xFF:
            # meta event: type byte, then length
            length, j = _read_vlq(track, i + 2)
            i = j + length
            continue
        if b & 0x80:
            status = b
            i += 1
        hi = status & 0xF0
        d1, d2 = track[i], track[i + 1]
        i += 2
        if hi == 0x90 and d2 > 0:
            out.append(("on", t, d1))
        elif hi == 0x80 or (hi == 0x90 and d2 == 0):
            out.append(("off", t, d1))
    return out


def split_tracks(data: bytes):
    assert data[:4] == b"MThd"
    fmt, ntrk, tpq = int.from_bytes(data[8:10], "big"), int.from_bytes(data[10:12], "big"), \
        int.from_bytes(data[12:14], "big")
    i, tracks = 14, []
    while i < len(data):
        assert data[i:i + 4] == b"MTrk"
        n = int.from_bytes(data[i + 4:i + 8], "big")
        tracks.append(data[i + 8:i + 8 + n])
        i += 8 + n
    return fmt, ntrk, tpq, tracks


def test_midi_four_quarters():
    p = Piece([quarters(("C4", "D4", "E4", "F4"))], PieceMetadata(tempo_bpm=120.0))
    fmt, ntrk, tpq, tracks = split_tracks(to_midi(p))
    assert (fmt, tpq) == (1, 480)
    assert ntrk == len(tracks) == 2
    assert b"\xff\x51\x03\x07\xa1\x20" in tracks[0]  # 500000 us per quarter
    ev = decode_track_events(tracks[1])
    ons = [e for e in ev if e[0] == "on"]
    offs = [e for e in ev if e[0] == "off"]
    assert [e[1] for e in ons] == [0, 480, 960, 1440]
    assert [e[1] for e in offs] == [480, 960, 1440, 1920]
    assert [e[2] for e in ons] == [60, 62, 64, 65]


@given(pieces(rests=False))
def test_midi_roundtrip_pitches_and_durations(p):
    back = from_midi(to_midi(p))
    for name in p.instruments:
        want = [(n.pitch, n.duration) for b in p.bars for n in b.voice(name).notes]
        got = [(n.pitch, n.duration) for b in back.bars for n in b.voice(name).notes
               if not n.is_rest]
        assert [pitch_to_midi(a) for a, _ in got] == [pitch_to_midi(a) for a, _ in want]
        assert [d for _, d in got] == pytest.approx([d for _, d in want])


def test_negative_duration_rejected_by_validation():
    bar = Bar(1, [VoiceLine("Piano", [NoteEvent("C4", 5.0), NoteEvent("D4", -1.0)])])
    assert "NonPositiveDuration" in {v.kind for v in validate_bar(bar, ["Piano"])}
