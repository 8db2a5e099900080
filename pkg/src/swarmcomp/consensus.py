"""Peer assessment, consensus aggregation, shaped rewards and trait evolution."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .policy.parse import SchemaError
from .policy.remote import LLMError
from .policy.state import (
    ASSESSMENT_SCORES, TRAITS, DetailedPeerAssessment, PersonalityVector, clamp_trait,
)
from .score_model import Piece
from .swarm_env import Environment, reinforce

log = logging.getLogger(__name__)

REWARD_WEIGHTS = {"musical_quality": 0.4, "objective_alignment": 0.3,
                  "swarm_cooperation": 0.15, "innovation_value": 0.15}
REWARD_THRESHOLD = 0.5
DELTA_MIN, DELTA_MAX = 0.05, 0.20
DRIFT = 0.01

__all__ = ["BadWeights", "BarConsensus", "ConsensusReport", "DetailedPeerAssessment",
           "aggregate", "assess_neighborhood", "clamp_delta", "evolve_personality",
           "neighborhood", "shaped_reward", "update_env_from_consensus"]


class BadWeights(ValueError):
    pass


def neighborhood(n_bars: int, target: int, k: int) -> list[int]:
    return [i for i in range(max(1, target - k), min(n_bars, target + k) + 1) if i != target]


def assess_neighborhood(piece: Piece, target: int, k: int, objective: str, policy,
                        personalities: Mapping[int, PersonalityVector] | None = None,
                        failures: list | None = None) -> list[DetailedPeerAssessment]:
    """Every agent within |i - j| <= k (self excluded) rates bar j.

    A rater whose reply cannot be parsed is skipped and logged.
    """
    out = []
    for rater in neighborhood(len(piece.bars), target, k):
        pers = (personalities or {}).get(rater, PersonalityVector())
        try:
            out.append(policy.peer_assess(piece, rater, target, objective, pers))
        except (SchemaError, LLMError, ValueError) as exc:
            log.warning("rater %d on bar %d skipped: %s", rater, target, exc)
            if failures is not None:
                failures.append({"rater": rater, "target": target, "error": str(exc)})
    return out


@dataclass
class BarConsensus:
    bar: int
    n_raters: int
    means: dict[str, float]
    agreement: dict[str, float]

    @property
    def mean_agreement(self) -> float:
        return float(np.mean(list(self.agreement.values())))

    def to_dict(self) -> dict:
        return {"bar": self.bar, "n_raters": self.n_raters, "means": self.means,
                "agreement": self.agreement, "mean_agreement": self.mean_agreement}


@dataclass
class ConsensusReport:
    bars: dict[int, BarConsensus]
    unassessed: list[int] = field(default_factory=list)
    sigma: float = 0.0

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "bars": [self.bars[b].to_dict() for b in sorted(self.bars)],
            "unassessed": self.unassessed,
        }


def aggregate(assessments: Mapping[int, Sequence[DetailedPeerAssessment]]) -> ConsensusReport:
    bars: dict[int, BarConsensus] = {}
    unassessed = []
    for bar in sorted(assessments):
        rows = assessments[bar]
        if not rows:
            unassessed.append(bar)
            continue
        # sorted so float summation order does not depend on rater order
        means, agreement = {}, {}
        for name in ASSESSMENT_SCORES:
            vals = np.array(sorted(getattr(a, name) for a in rows))
            means[name] = float(vals.mean())
            agreement[name] = float(1.0 - vals.std())
        bars[bar] = BarConsensus(bar, len(rows), means, agreement)
    values = [v for b in sorted(bars) for v in bars[b].means.values()]
    sigma = float(np.mean(values)) if values else 0.0
    return ConsensusReport(bars, unassessed, float(min(1.0, max(0.0, sigma))))


def shaped_reward(consensus: BarConsensus | Mapping[str, float],
                  weights: Mapping[str, float] | None = None) -> float:
    weights = dict(weights or REWARD_WEIGHTS)
    if set(weights) != set(ASSESSMENT_SCORES) or abs(sum(weights.values()) - 1.0) > 1e-9:
        raise BadWeights(f"reward weights must cover {ASSESSMENT_SCORES} and sum to 1")
    means = consensus.means if isinstance(consensus, BarConsensus) else consensus
    return float(sum(weights[k] * means[k] for k in ASSESSMENT_SCORES))


def clamp_delta(d: float) -> float:
    if d == 0.0:
        return 0.0
    mag = min(DELTA_MAX, max(DELTA_MIN, abs(d)))
    return float(np.copysign(mag, d))


def evolve_personality(theta: PersonalityVector, request, seed: int) -> tuple[PersonalityVector, bool]:
    """Apply policy-proposed trait deltas, or a small seeded drift if the policy fails.

    ``request`` is a zero-argument callable returning the raw delta mapping.
    Returns the new vector and whether the fallback was used.
    """
    try:
        deltas = request()
        unknown = set(deltas) - set(TRAITS)
        if unknown:
            raise SchemaError(f"unknown traits {sorted(unknown)}")
        new = {t: clamp_trait(getattr(theta, t) + clamp_delta(float(deltas.get(t, 0.0))))
               for t in TRAITS}
        return PersonalityVector(**new), False
    except (SchemaError, LLMError, ValueError, TypeError) as exc:
        log.warning("personality update failed, drifting: %s", exc)
        drift = np.random.default_rng(seed).uniform(-DRIFT, DRIFT, len(TRAITS))
        return PersonalityVector.from_array(theta.as_array() + drift), True


def update_env_from_consensus(env: Environment, rewards: Mapping[int, float], alpha: float,
                              decay: float) -> Environment:
    """Reinforce pheromones from well-rated bars; decay those from weak ones.

    A reward exactly at the threshold leaves the bar's pheromones alone.
    """
    for bar in sorted(rewards):
        r = rewards[bar]
        keys = sorted(k for k, p in env.pheromones.items() if p.source_bar == bar)
        if r > REWARD_THRESHOLD:
            for key in keys:
                reinforce(env, key, alpha, r)
        else:
            scale = decay * (REWARD_THRESHOLD - r) / REWARD_THRESHOLD
            for key in keys:
                env.pheromones[key].strength *= (1.0 - scale)
    return env
