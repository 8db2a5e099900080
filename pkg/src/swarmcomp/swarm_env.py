"""Shared stigmergic medium: musical pheromones over the 1-D bar axis."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Iterable

from .score_model import Bar, pitch_to_midi

MOTIF = "melodic_motif"
RHYTHM = "rhythm"
MOTIF_NOTES = 3  # interval 3-grams: windows of three notes, two intervals


class UnknownPattern(KeyError):
    pass


@dataclass
class EnvParams:
    decay: float = 0.15
    floor: float = 0.05
    reinforce: float = 0.25
    deposit_strength: float = 0.5
    theme_min_strength: float = 0.6
    theme_min_sources: int = 2
    radius: int = 2


@dataclass
class Pheromone:
    pattern_type: str
    pattern_data: tuple
    strength: float
    source_bar: int
    success_score: float = 0.0
    timestamp: int = 0
    reinforcements: int = 0

    @property
    def key(self) -> tuple:
        return (self.source_bar, self.pattern_type, self.pattern_data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pattern_data"] = list(self.pattern_data)
        return d


@dataclass
class Theme:
    pattern_type: str
    pattern_data: tuple
    source_bars: list[int]
    mean_strength: float

    def to_dict(self) -> dict:
        return {"pattern_type": self.pattern_type, "pattern_data": list(self.pattern_data),
                "source_bars": self.source_bars, "mean_strength": self.mean_strength}


@dataclass
class Environment:
    """Pheromones are keyed by (source_bar, type, pattern): the same pattern
    deposited by two bars is two pheromones, which is what theme detection
    counts."""
    pheromones: dict[tuple, Pheromone] = field(default_factory=dict)
    global_energy: float = 0.0
    emergent_themes: list[Theme] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pheromones)

    def find(self, pattern_type: str, pattern_data: tuple,
             source_bar: int | None = None) -> list[Pheromone]:
        return [p for p in self.pheromones.values()
                if p.pattern_type == pattern_type and p.pattern_data == tuple(pattern_data)
                and (source_bar is None or p.source_bar == source_bar)]

    def snapshot(self) -> "Environment":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        ordered = sorted(self.pheromones.values(), key=lambda p: (p.source_bar, p.pattern_type,
                                                                   p.pattern_data))
        return {
            "global_energy": self.global_energy,
            "pheromones": [p.to_dict() for p in ordered],
            "emergent_themes": [t.to_dict() for t in self.emergent_themes],
        }


# --------------------------------------------------------------------------
# pattern extraction

def bar_patterns(bar: Bar) -> list[tuple[str, tuple]]:
    """Interval 3-grams and the full duration sequence of each voice, deduplicated in order."""
    out: list[tuple[str, tuple]] = []
    seen = set()
    for line in bar.voices:
        midis = [pitch_to_midi(n.pitch) for n in line.notes if not n.is_rest]
        intervals = [b - a for a, b in zip(midis, midis[1:])]
        for k in range(len(intervals) - MOTIF_NOTES + 2):
            pat = (MOTIF, tuple(intervals[k:k + MOTIF_NOTES - 1]))
            if pat not in seen:
                seen.add(pat)
                out.append(pat)
        rhythm = (RHYTHM, tuple(round(n.duration, 9) for n in line.notes))
        if rhythm[1] and rhythm not in seen:
            seen.add(rhythm)
            out.append(rhythm)
    return out


# --------------------------------------------------------------------------
# operations (all mutate and return the environment)

def reinforce(env: Environment, pattern: Pheromone | tuple, alpha: float,
              success_score: float) -> Environment:
    key = pattern.key if isinstance(pattern, Pheromone) else pattern
    p = env.pheromones.get(key)
    if p is None:
        raise UnknownPattern(key)
    p.strength = min(1.0, p.strength + alpha * success_score)
    p.reinforcements += 1
    p.success_score += (success_score - p.success_score) / p.reinforcements
    return env


def deposit(env: Environment, pattern_type: str, pattern_data: tuple, source_bar: int,
            iteration: int, params: EnvParams, success_score: float = 1.0) -> Environment:
    key = (source_bar, pattern_type, tuple(pattern_data))
    if key in env.pheromones:
        reinforce(env, key, params.reinforce, success_score)
        env.pheromones[key].timestamp = iteration
    else:
        env.pheromones[key] = Pheromone(pattern_type, tuple(pattern_data),
                                        min(1.0, params.deposit_strength), source_bar,
                                        0.0, iteration)
    return env


def deposit_from_bar(env: Environment, bar: Bar, iteration: int,
                     params: EnvParams | None = None) -> Environment:
    params = params or EnvParams()
    for ptype, data in bar_patterns(bar):
        deposit(env, ptype, data, bar.bar_number, iteration, params)
    return env


def merge_deposits(env: Environment, bars: Iterable[Bar], iteration: int,
                   params: EnvParams | None = None) -> Environment:
    """Apply per-bar deposits in ascending (bar, pattern) order."""
    params = params or EnvParams()
    for bar in sorted(bars, key=lambda b: b.bar_number):
        for ptype, data in sorted(bar_patterns(bar)):
            deposit(env, ptype, data, bar.bar_number, iteration, params)
    return env


def decay_and_prune(env: Environment, decay: float, floor: float) -> Environment:
    for key in list(env.pheromones):
        p = env.pheromones[key]
        p.strength *= (1.0 - decay)
        if p.strength < floor:
            del env.pheromones[key]
    prune_themes(env)
    return env


def prune_themes(env: Environment) -> None:
    live = {(p.pattern_type, p.pattern_data, p.source_bar) for p in env.pheromones.values()}
    kept = []
    for t in env.emergent_themes:
        bars = [b for b in t.source_bars if (t.pattern_type, t.pattern_data, b) in live]
        if bars:
            kept.append(Theme(t.pattern_type, t.pattern_data, bars, t.mean_strength))
    env.emergent_themes = kept


def update_global_energy(env: Environment) -> float:
    if not env.pheromones:
        env.global_energy = 0.0
    else:
        env.global_energy = sum(p.strength for p in env.pheromones.values()) / len(env.pheromones)
    return env.global_energy


def detect_emergent_themes(env: Environment, s_min: float = 0.6, m_min: int = 2) -> list[Theme]:
    """Patterns sensed strongly (>= s_min) from at least m_min distinct bars."""
    groups: dict[tuple, list[Pheromone]] = {}
    for p in env.pheromones.values():
        if p.strength >= s_min:
            groups.setdefault((p.pattern_type, p.pattern_data), []).append(p)
    themes = []
    for (ptype, data), ps in groups.items():
        bars = sorted({p.source_bar for p in ps})
        if len(bars) >= m_min:
            themes.append(Theme(ptype, data, bars, sum(p.strength for p in ps) / len(ps)))
    themes.sort(key=lambda t: (-t.mean_strength, t.pattern_type, t.pattern_data))
    env.emergent_themes = themes
    return themes


def update_environment(env: Environment, params: EnvParams) -> Environment:
    decay_and_prune(env, params.decay, params.floor)
    update_global_energy(env)
    detect_emergent_themes(env, params.theme_min_strength, params.theme_min_sources)
    return env


@dataclass
class LocalView:
    pheromones: list[Pheromone]
    themes: list[Theme]
    global_energy: float

    def strongest(self, pattern_type: str) -> Pheromone | None:
        for p in self.pheromones:
            if p.pattern_type == pattern_type:
                return p
        return None

    def describe(self, limit: int = 6) -> str:
        lines = [f"global_energy={self.global_energy:.3f}"]
        for p in self.pheromones[:limit]:
            lines.append(f"{p.pattern_type} {list(p.pattern_data)} strength={p.strength:.2f} "
                         f"from bar {p.source_bar}")
        for t in self.themes[:limit]:
            lines.append(f"theme {t.pattern_type} {list(t.pattern_data)} bars={t.source_bars}")
        return "\n".join(lines)


def sense(env: Environment, bar_index: int, radius: int) -> LocalView:
    """Pheromones within |source_bar - bar_index| <= radius, strongest first.
    Emergent themes are always visible."""
    near = [p for p in env.pheromones.values() if abs(p.source_bar - bar_index) <= radius]
    near.sort(key=lambda p: (-p.strength, p.source_bar, p.pattern_type, p.pattern_data))
    return LocalView(near, list(env.emergent_themes), env.global_energy)
