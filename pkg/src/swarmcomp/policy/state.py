"""Per-agent state and the value types policies produce."""
from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..score_model import Bar, VoiceLine, bar_to_dict

TRAIT_MIN, TRAIT_MAX = 0.1, 0.9
TRAITS = ("risk_taking", "harmonic_sensitivity", "rhythmic_drive", "theme_loyalty",
          "neighbor_influence")
MEMORY_CAP = 8


def clamp_trait(x: float) -> float:
    return float(min(TRAIT_MAX, max(TRAIT_MIN, x)))


@dataclass
class PersonalityVector:
    risk_taking: float = 0.5
    harmonic_sensitivity: float = 0.5
    rhythmic_drive: float = 0.5
    theme_loyalty: float = 0.5
    neighbor_influence: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not TRAIT_MIN - 1e-12 <= v <= TRAIT_MAX + 1e-12:
                raise ValueError(f"{f.name}={v} outside [{TRAIT_MIN}, {TRAIT_MAX}]")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, t) for t in TRAITS])

    @classmethod
    def from_array(cls, values) -> "PersonalityVector":
        return cls(*(clamp_trait(float(v)) for v in values))

    def to_dict(self) -> dict:
        return asdict(self)

    def describe(self) -> str:
        return ", ".join(f"{t}={getattr(self, t):.2f}" for t in TRAITS)


@dataclass
class AgentState:
    """Bounded episodic memory of one bar agent (FIFO eviction at memory_cap)."""
    agent_id: int
    local_objective: str = ""
    memory_cap: int = MEMORY_CAP
    past_actions: deque = field(default_factory=deque)
    past_feedback: deque = field(default_factory=deque)
    past_objectives: deque = field(default_factory=deque)

    def __post_init__(self):
        self.past_actions = deque(self.past_actions, maxlen=self.memory_cap)
        self.past_feedback = deque(self.past_feedback, maxlen=self.memory_cap)
        self.past_objectives = deque(self.past_objectives, maxlen=self.memory_cap)

    def remember_action(self, bar: Bar) -> None:
        self.past_actions.append(bar)

    def remember_feedback(self, text: str) -> None:
        self.past_feedback.append(text)

    def set_objective(self, text: str) -> None:
        self.local_objective = text
        self.past_objectives.append(text)

    def to_dict(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "local_objective": self.local_objective,
            "past_actions": [bar_to_dict(b) for b in self.past_actions],
            "past_feedback": list(self.past_feedback),
            "past_objectives": list(self.past_objectives),
        }


@dataclass
class EnhancedBarProposal:
    voices: list[VoiceLine]
    rationale: str = ""
    detailed_reasoning: str = ""
    personality_reflection: str = ""
    pheromone_interpretation: str = ""

    def to_bar(self, bar_number: int) -> Bar:
        return Bar(bar_number, self.voices, self.rationale)


ASSESSMENT_SCORES = ("musical_quality", "objective_alignment", "swarm_cooperation",
                     "innovation_value")


@dataclass
class DetailedPeerAssessment:
    rater_id: int
    target_bar: int
    musical_quality: float
    objective_alignment: float
    swarm_cooperation: float
    innovation_value: float
    musical_feedback: str = ""
    cooperation_feedback: str = ""
    innovation_commentary: str = ""
    suggestions: str = ""

    def __post_init__(self):
        for name in ASSESSMENT_SCORES:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def scores(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in ASSESSMENT_SCORES}

    def to_dict(self) -> dict:
        return asdict(self)
