"""Strict parsing of model replies.

JSON is located leniently (markdown fences and chatter around the first
object are tolerated); everything after extraction is strict. Hard
failures are reported, never repaired.
"""
from __future__ import annotations

import json
import re
from typing import Any, Sequence

from ..score_model import (
    DEFAULT_BEATS, Bar, NoteEvent, Piece, PieceMetadata, Violation, VoiceLine, sanitize_note,
    validate_bar,
)
from .state import ASSESSMENT_SCORES, TRAITS, DetailedPeerAssessment, EnhancedBarProposal

_FENCE_RE = re.compile(r"```(?:json|JSON)?\s*(.*?)```", re.DOTALL)


class SchemaError(ValueError):
    """Reply is not the JSON shape we asked for."""


class MusicError(ValueError):
    """Reply parsed but breaks a musical invariant (duration sum, instrument set)."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


def extract_json(raw: str) -> dict:
    """Return the first JSON object in raw, looking inside code fences first."""
    if not isinstance(raw, str):
        raise SchemaError("reply is not text")
    candidates = [m.group(1) for m in _FENCE_RE.finditer(raw)] + [raw]
    decoder = json.JSONDecoder()
    for text in candidates:
        start = text.find("{")
        while start != -1:
            try:
                obj, _ = decoder.raw_decode(text, start)
            except json.JSONDecodeError:
                start = text.find("{", start + 1)
                continue
            if isinstance(obj, dict):
                return obj
            start = text.find("{", start + 1)
    raise SchemaError("no JSON object found in reply")


def _require(obj: dict, key: str, kind: type | tuple) -> Any:
    if key not in obj:
        raise SchemaError(f"missing field {key!r}")
    value = obj[key]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise SchemaError(f"field {key!r} has type {type(value).__name__}")
    return value


def _optional_text(obj: dict, key: str) -> str:
    value = obj.get(key, "")
    if value is None:
        return ""
    if not isinstance(value, str):
        raise SchemaError(f"field {key!r} must be text")
    return value


def _parse_notes(voice: dict) -> list[NoteEvent]:
    notes = _require(voice, "notes", list)
    if "durations" in voice:
        # parallel arrays: notes[] of names plus durations[]
        durations = _require(voice, "durations", list)
        if len(durations) != len(notes):
            raise SchemaError("notes and durations differ in length")
        pairs = list(zip(notes, durations))
    else:
        pairs = []
        for n in notes:
            if not isinstance(n, dict):
                raise SchemaError("each note must be an object with pitch and duration")
            pitch = n.get("pitch", n.get("note"))
            if pitch is None or "duration" not in n:
                raise SchemaError("note missing pitch or duration")
            pairs.append((pitch, n["duration"]))
    out = []
    for pitch, dur in pairs:
        if not isinstance(pitch, str):
            raise SchemaError("pitch must be a string")
        if isinstance(dur, bool) or not isinstance(dur, (int, float)):
            raise SchemaError("duration must be a number")
        out.append(NoteEvent(sanitize_note(pitch), float(dur)))
    return out


def _parse_voices(obj: dict) -> list[VoiceLine]:
    voices = _require(obj, "voices", list)
    lines = []
    for v in voices:
        if not isinstance(v, dict):
            raise SchemaError("each voice must be an object")
        lines.append(VoiceLine(_require(v, "instrument", str), _parse_notes(v)))
    return lines


def parse_bar_proposal(raw: str, voices: Sequence[str], beats: float = DEFAULT_BEATS,
                       bar_number: int = 1) -> EnhancedBarProposal:
    obj = extract_json(raw)
    proposal = EnhancedBarProposal(
        voices=_parse_voices(obj),
        rationale=_optional_text(obj, "rationale"),
        detailed_reasoning=_optional_text(obj, "detailed_reasoning"),
        personality_reflection=_optional_text(obj, "personality_reflection"),
        pheromone_interpretation=_optional_text(obj, "pheromone_interpretation"),
    )
    violations = validate_bar(proposal.to_bar(bar_number), voices, beats)
    if violations:
        raise MusicError(violations)
    return proposal


def parse_piece(raw: str, voices: Sequence[str], n_bars: int,
                beats: float = DEFAULT_BEATS, tempo_bpm: float | None = None) -> Piece:
    """Parse a whole single-shot composition; bar numbers must cover 1..N."""
    obj = extract_json(raw)
    md = obj.get("metadata", {})
    if not isinstance(md, dict):
        raise SchemaError("metadata must be an object")
    ts = md.get("time_signature", [4, 4])
    if isinstance(ts, str):
        try:
            ts = [int(x) for x in ts.split("/")]
        except ValueError as exc:
            raise SchemaError(f"bad time signature {ts!r}") from exc
    if not (isinstance(ts, list) and len(ts) == 2):
        raise SchemaError("time_signature must be [numerator, denominator]")
    tempo = md.get("tempo_bpm", md.get("tempo", tempo_bpm or 120.0))
    if isinstance(tempo, bool) or not isinstance(tempo, (int, float)):
        raise SchemaError("tempo must be a number")
    metadata = PieceMetadata(str(md.get("key", "C major")), (int(ts[0]), int(ts[1])),
                             float(tempo))
    bars_raw = _require(obj, "bars", list)
    bars = []
    for b in bars_raw:
        if not isinstance(b, dict):
            raise SchemaError("each bar must be an object")
        number = _require(b, "bar_number", int)
        bars.append(Bar(number, _parse_voices(b), _optional_text(b, "rationale")))
    numbers = sorted(b.bar_number for b in bars)
    violations = []
    if numbers != list(range(1, n_bars + 1)):
        violations.append(Violation("BarIndex", f"expected 1..{n_bars}, got {numbers}"))
    for b in bars:
        violations.extend(validate_bar(b, voices, beats))
    if violations:
        raise MusicError(violations)
    bars.sort(key=lambda b: b.bar_number)
    return Piece(bars=bars, metadata=metadata)


def parse_objective(raw: str) -> str:
    obj = extract_json(raw)
    text = _require(obj, "new_objective", str).strip()
    if not text:
        raise SchemaError("empty objective")
    return text


def _score(obj: dict, key: str) -> float:
    v = _require(obj, key, (int, float))
    v = float(v)
    if not 0.0 <= v <= 1.0:
        raise SchemaError(f"{key}={v} outside [0, 1]")
    return v


def parse_critic(raw: str) -> tuple[float, str]:
    obj = extract_json(raw)
    score = _score(obj, "score")
    justification = obj.get("justification", "")
    if isinstance(justification, (dict, list)):
        justification = json.dumps(justification, sort_keys=True)
    elif not isinstance(justification, str):
        raise SchemaError("justification must be text")
    return score, justification


def parse_assessment(raw: str, rater_id: int, target_bar: int) -> DetailedPeerAssessment:
    obj = extract_json(raw)
    scores = {k: _score(obj, k) for k in ASSESSMENT_SCORES}
    texts = {k: _optional_text(obj, k) for k in
             ("musical_feedback", "cooperation_feedback", "innovation_commentary", "suggestions")}
    return DetailedPeerAssessment(rater_id, target_bar, **scores, **texts)


def parse_trait_deltas(raw: str) -> dict[str, float]:
    obj = extract_json(raw)
    deltas = obj.get("deltas", obj.get("trait_adjustments"))
    if not isinstance(deltas, dict):
        raise SchemaError("missing object field 'deltas'")
    out = {}
    for k, v in deltas.items():
        if k not in TRAITS:
            raise SchemaError(f"unknown trait {k!r}")
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"delta for {k!r} must be a number")
        out[k] = float(v)
    return out
