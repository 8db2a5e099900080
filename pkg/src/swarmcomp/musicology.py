"""Symbolic creativity and tonal metrics.

Melody-level measures (expectation violations, surprise density,
unpredictability, creative risk) run on a single voice, by default the
upper voice (highest mean pitch). Rhythm and tonal measures use all voices.
"""
from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import find_peaks

from .score_model import Bar, Piece, pitch_to_midi

log = logging.getLogger(__name__)

STEP_MAX = 2
LEAP_MIN = 7  # a leap is strictly larger than this
DISSONANT_CLASSES = frozenset({1, 2, 6, 10, 11})

# Krumhansl-Kessler probe-tone profiles, tonic first.
KS_MAJOR = np.array([6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88])
KS_MINOR = np.array([6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17])
_PC_NAMES = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"]


class EmptyMelody(ValueError):
    pass


@dataclass
class MelodyView:
    notes: list[tuple[int, float]]
    intervals: list[int]

    @property
    def pitches(self) -> list[int]:
        return [m for m, _ in self.notes]


@dataclass
class CreativeMetrics:
    expectation_violations: int
    mean_surprise: float
    surprise_density: float
    violation_density: float
    unpredictability: float
    creative_risk: float
    note_count: int
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# melody extraction

def voice_notes(piece: Piece | Sequence[Bar], instrument: str) -> list[tuple[int, float]]:
    bars = piece.bars if isinstance(piece, Piece) else piece
    out = []
    for bar in bars:
        line = bar.voice(instrument)
        if line is None:
            continue
        out.extend((pitch_to_midi(n.pitch), n.duration) for n in line.notes if not n.is_rest)
    return out


def upper_voice(piece: Piece | Sequence[Bar]) -> str | None:
    bars = piece.bars if isinstance(piece, Piece) else piece
    if not bars:
        return None
    best, best_mean = None, -math.inf
    for v in bars[0].voices:
        notes = voice_notes(bars, v.instrument)
        mean = np.mean([m for m, _ in notes]) if notes else -math.inf
        if best is None or mean > best_mean:
            best, best_mean = v.instrument, mean
    return best


def melody_view(piece: Piece | Sequence[Bar], voice: str = "upper") -> MelodyView:
    """Rest-free (midi, duration) pairs of one voice plus its interval sequence."""
    instrument = upper_voice(piece) if voice == "upper" else voice
    notes = voice_notes(piece, instrument) if instrument else []
    return melody_from_pitches([m for m, _ in notes], [d for _, d in notes])


def melody_from_pitches(pitches: Sequence[int], durations: Sequence[float] | None = None) -> MelodyView:
    durations = durations if durations is not None else [1.0] * len(pitches)
    notes = list(zip((int(p) for p in pitches), durations))
    intervals = [b - a for (a, _), (b, _) in zip(notes, notes[1:])]
    return MelodyView(notes, intervals)


# --------------------------------------------------------------------------
# creative metrics

def expectation_violations(melody: MelodyView) -> tuple[int, float, list[float]]:
    """Step (<= 2 semitones) followed by a leap (> 7 semitones).

    Returns (count, mean surprise, per-violation surprises). Surprise of a
    violation is min(1, |leap| / 12). Fewer than 3 notes gives (0, 0, []).
    """
    iv = melody.intervals
    if len(iv) < 2:
        return 0, 0.0, []
    surprises = [min(1.0, abs(b) / 12.0)
                 for a, b in zip(iv, iv[1:]) if abs(a) <= STEP_MAX and abs(b) > LEAP_MIN]
    mean = float(np.mean(surprises)) if surprises else 0.0
    return len(surprises), mean, surprises


def surprise_density(melody: MelodyView) -> float:
    """Leaps (> 7 semitones) per note."""
    n = len(melody.notes)
    if n == 0:
        raise EmptyMelody("surprise density of an empty melody")
    return sum(1 for i in melody.intervals if abs(i) > LEAP_MIN) / n


def predictability(melody: MelodyView) -> tuple[float, int]:
    """Self-trained order-2 interval model.

    For every interval bigram, the most frequent continuation is the model's
    prediction; predictability is the fraction of continuations it gets
    right. Returns (predictability, number of distinct bigrams).
    """
    iv = melody.intervals
    table: dict[tuple[int, int], Counter] = defaultdict(Counter)
    for a, b, c in zip(iv, iv[1:], iv[2:]):
        table[(a, b)][c] += 1
    total = sum(sum(c.values()) for c in table.values())
    if total == 0:
        return 1.0, 0
    hits = sum(max(c.values()) for c in table.values())
    return hits / total, len(table)


def unpredictability(melody: MelodyView) -> tuple[float, list[str]]:
    """1 - predictability, with flags for short or low-support melodies."""
    iv = melody.intervals
    if len(iv) < 3:
        return 0.0, ["too_short"]
    p, distinct = predictability(melody)
    flags = []
    if distinct == len(iv) - 2:
        # every bigram seen once: the model trivially predicts itself
        flags.append("low_support")
    return 1.0 - p, flags


def creative_risk(large_leap_ratio: float, violation_density: float,
                  unpredictability_: float) -> float:
    return (large_leap_ratio + violation_density + unpredictability_) / 3.0


def creative_metrics(melody: MelodyView) -> CreativeMetrics:
    n = len(melody.notes)
    flags: list[str] = []
    if n == 0:
        return CreativeMetrics(0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, ["empty"])
    count, mean_s, _ = expectation_violations(melody)
    if n < 3:
        flags.append("too_short")
    density = surprise_density(melody)
    unpred, uflags = unpredictability(melody)
    flags.extend(f for f in uflags if f not in flags)
    vdens = count / n
    return CreativeMetrics(count, mean_s, density, vdens, unpred,
                           creative_risk(density, vdens, unpred), n, flags)


# --------------------------------------------------------------------------
# rhythm

def rhythm_histogram(piece: Piece | Sequence[Bar], include_rests: bool = False) -> list[tuple[float, int]]:
    """Exact-value duration bins over all voices, shortest first."""
    bars = piece.bars if isinstance(piece, Piece) else piece
    counts: Counter = Counter()
    for bar in bars:
        for line in bar.voices:
            for n in line.notes:
                if include_rests or not n.is_rest:
                    counts[round(n.duration, 9)] += 1
    return sorted(counts.items())


def rhythm_diversity(piece: Piece | Sequence[Bar], vocabulary: int = 8) -> float:
    """Shannon entropy of the duration histogram over log(vocabulary), clipped to 1."""
    hist = rhythm_histogram(piece)
    total = sum(c for _, c in hist)
    if total == 0 or len(hist) < 2:
        return 0.0
    p = np.array([c for _, c in hist], dtype=float) / total
    return float(min(1.0, -(p * np.log(p)).sum() / math.log(vocabulary)))


# --------------------------------------------------------------------------
# tonal analysis

def key_templates() -> list[tuple[str, np.ndarray]]:
    out = []
    for tonic in range(12):
        out.append((f"{_PC_NAMES[tonic]} major", np.roll(KS_MAJOR, tonic)))
    for tonic in range(12):
        out.append((f"{_PC_NAMES[tonic]} minor", np.roll(KS_MINOR, tonic)))
    return out


_TEMPLATES = key_templates()


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float((a * a).sum() * (b * b).sum()))
    return float((a * b).sum() / den) if den > 0 else 0.0


def key_correlations(profile: np.ndarray) -> list[tuple[str, float]]:
    return [(name, _pearson(profile, t)) for name, t in _TEMPLATES]


def estimate_key(profile: np.ndarray) -> tuple[str, float]:
    return max(key_correlations(profile), key=lambda kv: kv[1])


def pitch_class_profile(bars: Sequence[Bar]) -> np.ndarray:
    prof = np.zeros(12)
    for bar in bars:
        for line in bar.voices:
            for n in line.notes:
                if not n.is_rest:
                    prof[pitch_to_midi(n.pitch) % 12] += n.duration
    return prof


def sounding_segments(bar: Bar) -> list[tuple[float, list[int]]]:
    """Split a bar at every onset into (segment length, sounding MIDI pitches)."""
    spans = []
    for line in bar.voices:
        t = 0.0
        for n in line.notes:
            if not n.is_rest:
                spans.append((t, t + n.duration, pitch_to_midi(n.pitch)))
            t += n.duration
    cuts = sorted({round(x, 9) for s, e, _ in spans for x in (s, e)})
    out = []
    for a, b in zip(cuts, cuts[1:]):
        mid = 0.5 * (a + b)
        out.append((b - a, [m for s, e, m in spans if s <= mid < e]))
    return out


def dissonance(bar: Bar) -> float:
    """Duration-weighted fraction of dissonant interval classes among simultaneous pairs."""
    num = den = 0.0
    for length, pitches in sounding_segments(bar):
        for i in range(len(pitches)):
            for j in range(i + 1, len(pitches)):
                ic = abs(pitches[i] - pitches[j]) % 12
                den += length
                if ic in DISSONANT_CLASSES:
                    num += length
    return num / den if den > 0 else 0.0


@dataclass
class TonalCurves:
    stability: list[float]
    tension: list[float]
    global_key: str
    tension_peaks: list[int]
    tension_valleys: list[int]
    stability_peaks: list[int]
    stability_valleys: list[int]
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def extrema(curve: Sequence[float], rel_threshold: float = 0.25) -> tuple[list[int], list[int]]:
    """Local maxima/minima whose prominence reaches rel_threshold * (max - min)."""
    c = np.asarray(curve, dtype=float)
    if c.size < 3:
        return [], []
    span = float(c.max() - c.min())
    if span <= 0:
        return [], []
    thr = rel_threshold * span
    peaks, _ = find_peaks(c, prominence=thr)
    valleys, _ = find_peaks(-c, prominence=thr)
    return peaks.tolist(), valleys.tolist()


def tonal_curves(piece: Piece | Sequence[Bar], tension_weights: tuple[float, float] = (0.5, 0.5),
                 rel_threshold: float = 0.25) -> TonalCurves:
    """Per-measure stability and tension.

    Stability is the best Krumhansl-Schmuckler correlation of the measure's
    duration-weighted pitch-class profile mapped to [0, 1] via (r + 1) / 2.
    Tension blends simultaneous-pair dissonance with key distance
    (1 - r against the global key) / 2.
    """
    bars = piece.bars if isinstance(piece, Piece) else list(piece)
    global_prof = pitch_class_profile(bars)
    flags = []
    if global_prof.sum() == 0:
        flags.append("all_rests")
        z = [0.0] * len(bars)
        return TonalCurves(z, list(z), "none", [], [], [], [], flags)
    gkey, _ = estimate_key(global_prof)
    gtemplate = dict(_TEMPLATES)[gkey]
    wd, wk = tension_weights
    stability, tension = [], []
    for bar in bars:
        prof = pitch_class_profile([bar])
        if prof.sum() == 0:
            stability.append(0.0)
            tension.append(0.0)
            if "empty_measures" not in flags:
                flags.append("empty_measures")
            continue
        _, r = estimate_key(prof)
        stability.append((r + 1.0) / 2.0)
        kd = (1.0 - _pearson(prof, gtemplate)) / 2.0
        tension.append((wd * dissonance(bar) + wk * kd) / (wd + wk))
    tp, tv = extrema(tension, rel_threshold)
    sp, sv = extrema(stability, rel_threshold)
    return TonalCurves(stability, tension, gkey, tp, tv, sp, sv, flags)


# --------------------------------------------------------------------------
# reports

def is_empty_bar(bar: Bar) -> bool:
    return all(n.is_rest for line in bar.voices for n in line.notes)


def analyze_piece(piece: Piece, voice: str = "upper", drop_empty: bool = True) -> dict:
    bars = [b for b in piece.bars if not (drop_empty and is_empty_bar(b))]
    melody = melody_view(bars, voice)
    cm = creative_metrics(melody)
    tc = tonal_curves(bars) if bars else TonalCurves([], [], "none", [], [], [], [], ["no_bars"])
    return {
        "bars_analyzed": len(bars),
        "bars_dropped": len(piece.bars) - len(bars),
        "melody_voice": upper_voice(bars) if voice == "upper" else voice,
        "creative": cm.to_dict(),
        "rhythm_histogram": [[d, c] for d, c in rhythm_histogram(bars)],
        "rhythm_diversity": rhythm_diversity(bars),
        "tonal": tc.to_dict(),
        "mean_stability": float(np.mean(tc.stability)) if tc.stability else 0.0,
        "mean_tension": float(np.mean(tc.tension)) if tc.tension else 0.0,
    }
