"""Deterministic offline policy.

Stands in for the frozen language model so every loop runs without
network access. Personality traits map onto sampling knobs:

* risk_taking          -> probability of a leap instead of a step
* harmonic_sensitivity -> probability of snapping out-of-scale notes into the key
* rhythmic_drive       -> probability of subdividing beats
* theme_loyalty        -> probability of reusing the strongest sensed motif/rhythm
* neighbor_influence   -> probability of imitating the neighbor bar's contour

All randomness comes from the integer seed passed in.
"""
from __future__ import annotations

import json
import re
from typing import Sequence

import numpy as np

from .. import musicology as mu
from ..score_model import (
    Bar, NoteEvent, Piece, PieceMetadata, VoiceLine, midi_to_pitch, pitch_to_midi,
    piece_to_dict,
)
from ..swarm_env import MOTIF, RHYTHM, LocalView, bar_patterns
from .state import (
    AgentState, DetailedPeerAssessment, EnhancedBarProposal, PersonalityVector, TRAITS,
    clamp_trait,
)

_PC = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
MAJOR_STEPS = (0, 2, 4, 5, 7, 9, 11)
MINOR_STEPS = (0, 2, 3, 5, 7, 8, 10)

CRITIC_WEIGHTS = {"stability": 0.4, "rhythm": 0.2, "clean": 0.2, "risk": 0.2}
_BAR_LINE = re.compile(r"bar\s+(\d+)\s*:\s*(.*)", re.IGNORECASE)
_KV = re.compile(r"([a-z_]+)\s*=\s*([-+]?\d*\.?\d+)")


def parse_key(key: str) -> tuple[int, str]:
    parts = key.strip().split()
    if not parts or not parts[0] or parts[0][0].upper() not in _PC:
        return 0, "major"
    name = parts[0]
    pc = _PC[name[0].upper()]
    for ch in name[1:]:
        pc += 1 if ch == "#" else -1 if ch in "b♭" else 0
    mode = "minor" if len(parts) > 1 and parts[1].lower().startswith("min") else "major"
    return pc % 12, mode


def scale_pitch_classes(key: str) -> set[int]:
    tonic, mode = parse_key(key)
    steps = MINOR_STEPS if mode == "minor" else MAJOR_STEPS
    return {(tonic + s) % 12 for s in steps}


# --------------------------------------------------------------------------
# composing

def _objective_bias(text: str) -> dict[str, float]:
    """Nudges read from the agent's local objective (the stub's only use of text)."""
    t = text.lower()
    bias = dict.fromkeys(TRAITS, 0.0)
    if "stability" in t or "chord tone" in t:
        bias["harmonic_sensitivity"] += 0.2
    if "rhythm" in t:
        bias["rhythmic_drive"] += 0.2
    if "smooth" in t:
        bias["risk_taking"] -= 0.2
    if "bold" in t or "surpris" in t:
        bias["risk_taking"] += 0.2
    return bias


def _rhythm(rng: np.random.Generator, drive: float, beats: float) -> list[float]:
    out: list[float] = []
    t = 0.0
    while t < beats - 1e-9:
        left = beats - t
        if left < 1.0 - 1e-9:
            out.append(left)
            break
        u = rng.random()
        if u < 0.8 * drive:
            for _ in range(2):
                if rng.random() < max(0.0, drive - 0.5) * 1.2:
                    out.extend([0.25, 0.25])
                else:
                    out.append(0.5)
            t += 1.0
        elif u > 1.0 - 0.35 * (1.0 - drive) and left >= 2.0 - 1e-9 and abs(t % 2.0) < 1e-9:
            out.append(2.0)
            t += 2.0
        else:
            out.append(1.0)
            t += 1.0
    return out


def _fold(p: int, center: int, span: int = 14) -> int:
    while p > center + span:
        p -= 12
    while p < center - span:
        p += 12
    return int(min(108, max(21, p)))


def _snap(p: int, scale: set[int], rng: np.random.Generator) -> int:
    if p % 12 in scale:
        return p
    for d in ((1, -1) if rng.random() < 0.5 else (-1, 1)):
        if (p + d) % 12 in scale:
            return p + d
    return p


def _voice_midis(bar: Bar | None, instrument: str) -> list[int]:
    if bar is None:
        return []
    line = bar.voice(instrument)
    return [pitch_to_midi(n.pitch) for n in line.notes if not n.is_rest] if line else []


def deterministic_compose(state: AgentState, personality: PersonalityVector,
                          context: Sequence[Bar], objective: str, seed: int, *,
                          bar_number: int | None = None, voices: Sequence[str] = ("Piano",),
                          metadata: PieceMetadata | None = None,
                          view: LocalView | None = None) -> EnhancedBarProposal:
    """Seeded bar generator; a pure function of its arguments."""
    metadata = metadata or PieceMetadata()
    beats = metadata.beats_per_bar
    bar_number = bar_number or state.agent_id
    rng = np.random.default_rng(seed)
    bias = _objective_bias(state.local_objective)
    traits = {t: clamp_trait(getattr(personality, t) + bias[t]) for t in TRAITS}
    scale = scale_pitch_classes(metadata.key)
    tonic, _ = parse_key(metadata.key)
    by_number = {b.bar_number: b for b in context}
    prev_bar = by_number.get(bar_number - 1)
    next_bar = by_number.get(bar_number + 1)
    neighbor = prev_bar or next_bar

    motif = view.strongest(MOTIF) if view else None
    rhythm_ph = view.strongest(RHYTHM) if view else None
    if view and view.themes:
        themed = [t for t in view.themes if t.pattern_type == MOTIF]
        if themed:
            motif = themed[0]

    notes_log = []
    lines = []
    for vi, name in enumerate(voices):
        center = max(40, 72 - 12 * vi) // 12 * 12 + tonic
        # rhythm
        if (rhythm_ph is not None and rng.random() < traits["theme_loyalty"]
                and abs(sum(rhythm_ph.pattern_data) - beats) < 1e-9):
            durations = [float(d) for d in rhythm_ph.pattern_data]
            notes_log.append(f"{name}: reused sensed rhythm")
        else:
            durations = _rhythm(rng, traits["rhythmic_drive"], beats)
        n = len(durations)
        # contour
        prev_m = _voice_midis(prev_bar, name)
        start = prev_m[-1] if prev_m else center
        intervals: list[int] = []
        neigh = _voice_midis(neighbor, name)
        neigh_iv = [b - a for a, b in zip(neigh, neigh[1:])]
        if neigh_iv and rng.random() < traits["neighbor_influence"]:
            intervals = [neigh_iv[k % len(neigh_iv)] for k in range(n - 1)]
            notes_log.append(f"{name}: imitated neighbor contour")
        else:
            if motif is not None and rng.random() < traits["theme_loyalty"]:
                intervals = list(motif.pattern_data)[: n - 1]
                notes_log.append(f"{name}: restated motif {list(motif.pattern_data)}")
            p = start + sum(intervals)
            while len(intervals) < n - 1:
                if rng.random() < 0.05 + 0.7 * traits["risk_taking"]:
                    mag = int(rng.integers(5, 13))
                else:
                    mag = int(rng.choice([0, 1, 2], p=[0.2, 0.4, 0.4]))
                if p > center + 7:
                    sign = -1
                elif p < center - 7:
                    sign = 1
                else:
                    sign = 1 if rng.random() < 0.5 else -1
                intervals.append(sign * mag)
                p += sign * mag
        pitches = [start]
        for iv in intervals:
            pitches.append(pitches[-1] + iv)
        out = []
        for p in pitches:
            p = _fold(p, center)
            if rng.random() < traits["harmonic_sensitivity"]:
                p = _snap(p, scale, rng)
            out.append(p)
        lines.append(VoiceLine(name, [NoteEvent(midi_to_pitch(p), d)
                                      for p, d in zip(out, durations)]))

    refl = (f"leap probability {0.05 + 0.7 * traits['risk_taking']:.2f}, "
            f"in-key snapping {traits['harmonic_sensitivity']:.2f}, "
            f"subdivision {0.8 * traits['rhythmic_drive']:.2f}")
    pher = view.describe(3) if view else "no environment"
    return EnhancedBarProposal(
        voices=lines,
        rationale=f"bar {bar_number}: " + ("; ".join(notes_log) or "free random walk in key"),
        detailed_reasoning=f"objective: {state.local_objective or objective}",
        personality_reflection=refl,
        pheromone_interpretation=pher,
    )


def compose_piece(n_bars: int, voices: Sequence[str], metadata: PieceMetadata, objective: str,
                  seed: int) -> str:
    """Whole piece in one call; returns the reply text a single-shot model would."""
    bars: list[Bar] = []
    personality = PersonalityVector()
    for i in range(1, n_bars + 1):
        state = AgentState(agent_id=i)
        sub = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        prop = deterministic_compose(state, personality, bars[-1:], objective, sub,
                                     bar_number=i, voices=voices, metadata=metadata)
        bars.append(prop.to_bar(i))
    d = piece_to_dict(Piece(bars, metadata))
    d["rationale"] = f"single pass toward: {objective}"
    return json.dumps(d)


# --------------------------------------------------------------------------
# central critic

def critic_components(bars: Sequence[Bar]) -> dict[str, float]:
    melody = mu.melody_view(bars)
    cm = mu.creative_metrics(melody)
    curves = mu.tonal_curves(bars)
    return {
        "stability": float(np.mean(curves.stability)) if curves.stability else 0.0,
        "rhythm": mu.rhythm_diversity(bars),
        # no notes at all: the clean-line credit is 0, not 1
        "clean": 1.0 - cm.violation_density if cm.note_count else 0.0,
        "risk": cm.creative_risk,
    }


def _fmt(components: dict[str, float]) -> str:
    return ", ".join(f"{k}={v:.3f}" for k, v in components.items())


def deterministic_assess(piece: Piece, objective: str = "",
                         weights: dict[str, float] | None = None) -> tuple[float, str]:
    """Score a draft as a clamped blend of four computable components.

    Mapping to a critic's vocabulary: harmony -> tonal stability,
    rhythm -> rhythm diversity, voice-leading -> 1 - violation density,
    form/creativity -> creative risk. The justification carries one line
    per bar so agents can pick out their own cues.
    """
    weights = weights or CRITIC_WEIGHTS
    comps = critic_components(piece.bars)
    sigma = float(min(1.0, max(0.0, sum(weights[k] * comps[k] for k in weights))))
    curves = mu.tonal_curves(piece.bars)
    voice = mu.upper_voice(piece)
    lines = [f"overall: sigma={sigma:.3f}, {_fmt(comps)}"]
    for idx, bar in enumerate(piece.bars):
        cm = mu.creative_metrics(mu.melody_view([bar], voice) if voice else mu.MelodyView([], []))
        per = {
            "stability": curves.stability[idx] if curves.stability else 0.0,
            "rhythm": mu.rhythm_diversity([bar]),
            "clean": 1.0 - cm.violation_density if cm.note_count else 0.0,
            "risk": cm.creative_risk,
        }
        lines.append(f"bar {bar.bar_number}: {_fmt(per)}")
    return sigma, "\n".join(lines)


def feedback_for_bar(justification: str, bar_number: int) -> str:
    """The critic line addressed to one bar (empty if none)."""
    for line in justification.splitlines():
        m = _BAR_LINE.match(line.strip())
        if m and int(m.group(1)) == bar_number:
            return m.group(2)
    return ""


_OBJECTIVE_TEMPLATES = {
    "stability": "Strengthen tonal stability in bar {i} by favouring chord tones of the home key.",
    "rhythm": "Vary the rhythm of bar {i} with a richer mix of note values.",
    "clean": "Smooth the melodic line of bar {i} so leaps are prepared and resolved.",
    "risk": "Take a bolder melodic risk in bar {i} with one surprising leap.",
}


def stub_objective(state: AgentState, feedback: str, global_objective: str) -> str:
    values = {k: float(v) for k, v in _KV.findall(feedback)}
    values = {k: v for k, v in values.items() if k in _OBJECTIVE_TEMPLATES}
    if not values:
        return f"Serve the global objective in bar {state.agent_id}: {global_objective.strip()[:80]}"
    weakest = min(values, key=lambda k: (values[k], k))
    return _OBJECTIVE_TEMPLATES[weakest].format(i=state.agent_id)


# --------------------------------------------------------------------------
# peer assessment

_BOLD_WORDS = ("bold", "surpris", "adventur", "unpredict", "explor", "daring", "novel")


def target_risk(objective: str) -> float:
    t = objective.lower()
    return 0.6 if any(w in t for w in _BOLD_WORDS) else 0.3


def _continuity(piece: Piece, j: int) -> float:
    scores = []
    bar = piece.bar(j)
    for line in bar.voices:
        mids = _voice_midis(bar, line.instrument)
        if not mids:
            continue
        if j > 1:
            prev = _voice_midis(piece.bar(j - 1), line.instrument)
            if prev:
                scores.append(1.0 - min(1.0, abs(mids[0] - prev[-1]) / 12.0))
        if j < len(piece.bars):
            nxt = _voice_midis(piece.bar(j + 1), line.instrument)
            if nxt:
                scores.append(1.0 - min(1.0, abs(nxt[0] - mids[-1]) / 12.0))
    return float(np.mean(scores)) if scores else 0.5


def stub_peer_assessment(piece: Piece, rater: int, target: int, objective: str,
                         rater_personality: PersonalityVector) -> DetailedPeerAssessment:
    """Local, rater-weighted scoring of one bar from its neighborhood."""
    lo, hi = max(1, target - 1), min(len(piece.bars), target + 1)
    local = [piece.bar(b) for b in range(lo, hi + 1)]
    pos = target - lo
    curves = mu.tonal_curves(local)
    h = rater_personality.harmonic_sensitivity
    quality = h * curves.stability[pos] + (1.0 - h) * (1.0 - curves.tension[pos])

    voice = mu.upper_voice(piece)
    bar = piece.bar(target)
    cm = mu.creative_metrics(mu.melody_view([bar], voice) if voice else mu.MelodyView([], []))
    alignment = 1.0 - min(1.0, abs(cm.creative_risk - target_risk(objective)))

    own = set(bar_patterns(bar))
    others = set()
    for b in local:
        if b.bar_number != target:
            others |= set(bar_patterns(b))
    shared = len(own & others) / len(own) if own else 0.0
    ni = rater_personality.neighbor_influence
    cooperation = ni * _continuity(piece, target) + (1.0 - ni) * shared

    rest = set()
    for b in piece.bars:
        if b.bar_number != target:
            rest |= {p for p in bar_patterns(b) if p[0] == MOTIF}
    motifs = {p for p in own if p[0] == MOTIF}
    novelty = len(motifs - rest) / len(motifs) if motifs else 0.0
    r = rater_personality.risk_taking
    innovation = min(1.0, 0.7 * novelty + 0.3 * min(1.0, 2.0 * r * cm.surprise_density))

    clip = lambda x: float(min(1.0, max(0.0, x)))  # noqa: E731
    return DetailedPeerAssessment(
        rater_id=rater, target_bar=target,
        musical_quality=clip(quality), objective_alignment=clip(alignment),
        swarm_cooperation=clip(cooperation), innovation_value=clip(innovation),
        musical_feedback=(f"stability {curves.stability[pos]:.2f}, tension "
                          f"{curves.tension[pos]:.2f}"),
        cooperation_feedback=f"shares {shared:.0%} of its patterns with neighbors",
        innovation_commentary=f"{novelty:.0%} of its motifs are new to the piece",
        suggestions=("add a surprising leap" if innovation < 0.4 else
                     "tie the line closer to neighbors" if cooperation < 0.5 else
                     "keep developing this material"),
    )


# --------------------------------------------------------------------------
# personality adaptation

def stub_trait_deltas(consensus: dict[str, float], n_themes: int, seed: int) -> dict[str, float]:
    """Heuristic trait moves from the bar's consensus scores."""
    rng = np.random.default_rng(seed)

    def step() -> float:
        return 0.1 if rng.random() < 0.3 else 0.05

    q = consensus.get("musical_quality", 0.5)
    a = consensus.get("objective_alignment", 0.5)
    c = consensus.get("swarm_cooperation", 0.5)
    inv = consensus.get("innovation_value", 0.5)
    d = dict.fromkeys(TRAITS, 0.0)
    if inv < 0.4:
        d["risk_taking"] = step()
        d["rhythmic_drive"] = step()
    elif inv > 0.8:
        d["risk_taking"] = -step()
    if q < 0.6:
        d["harmonic_sensitivity"] = step()
    elif q > 0.85:
        d["harmonic_sensitivity"] = -step()
    if c < 0.5:
        d["neighbor_influence"] = step()
    elif c > 0.85:
        d["neighbor_influence"] = -step()
    if n_themes and a >= 0.5:
        d["theme_loyalty"] = step()
    elif a < 0.5:
        d["theme_loyalty"] = -step()
    return {k: v for k, v in d.items() if v != 0.0}

