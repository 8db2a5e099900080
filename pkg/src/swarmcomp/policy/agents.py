"""Policy front-ends: one interface, a seeded offline stub and a remote chat model."""
from __future__ import annotations

import json
import logging
from typing import Sequence

import httpx

from ..score_model import Bar, Piece, PieceMetadata, bar_to_dict, piece_to_dict
from ..swarm_env import LocalView
from . import parse, prompts, stub
from .remote import ChatClient, PolicyConfig
from .state import AgentState, DetailedPeerAssessment, EnhancedBarProposal, PersonalityVector

log = logging.getLogger(__name__)


def _bars_json(bars: Sequence[Bar]) -> str:
    return json.dumps([bar_to_dict(b) for b in bars])


class StubPolicy:
    kind = "stub"

    def __init__(self, config: PolicyConfig | None = None):
        self.config = config or PolicyConfig()

    def propose_objective(self, state: AgentState, feedback: str, global_objective: str,
                          n_bars: int = 0) -> str:
        return stub.stub_objective(state, feedback, global_objective)

    def compose_bar(self, state: AgentState, personality: PersonalityVector,
                    context: Sequence[Bar], objective: str, seed: int, *, bar_number: int,
                    voices: Sequence[str], metadata: PieceMetadata,
                    view: LocalView | None = None, feedback: str = "",
                    n_bars: int = 0) -> EnhancedBarProposal:
        return stub.deterministic_compose(state, personality, context, objective, seed,
                                          bar_number=bar_number, voices=voices,
                                          metadata=metadata, view=view)

    def assess_piece(self, piece: Piece, objective: str) -> tuple[float, str]:
        return stub.deterministic_assess(piece, objective)

    def peer_assess(self, piece: Piece, rater: int, target: int, objective: str,
                    rater_personality: PersonalityVector) -> DetailedPeerAssessment:
        return stub.stub_peer_assessment(piece, rater, target, objective, rater_personality)

    def personality_deltas(self, agent: int, personality: PersonalityVector,
                           consensus: dict[str, float], feedback: Sequence[str],
                           objective: str, n_themes: int, seed: int,
                           context: Sequence[Bar] = ()) -> dict[str, float]:
        return stub.stub_trait_deltas(consensus, n_themes, seed)

    def compose_piece(self, n_bars: int, voices: Sequence[str], metadata: PieceMetadata,
                      objective: str, seed: int) -> str:
        return stub.compose_piece(n_bars, voices, metadata, objective, seed)

    def close(self) -> None:
        pass


class RemotePolicy:
    """Prompts rendered from templates; every reply goes through the strict parsers."""
    kind = "remote"

    def __init__(self, config: PolicyConfig, transport: httpx.BaseTransport | None = None,
                 client: ChatClient | None = None):
        self.config = config
        self.client = client or ChatClient(config, transport=transport)

    def _ask(self, template: str, **values) -> str:
        text = prompts.render(template, self.config.template_dir, **values)
        return self.client.complete([{"role": "user", "content": text}])

    def propose_objective(self, state: AgentState, feedback: str, global_objective: str,
                          n_bars: int = 0) -> str:
        raw = self._ask("reflection", bar_number=state.agent_id, n_bars=n_bars,
                        objective=global_objective, feedback=feedback or "(none yet)",
                        history="\n".join(state.past_objectives) or "(none)")
        return parse.parse_objective(raw)

    def compose_bar(self, state: AgentState, personality: PersonalityVector,
                    context: Sequence[Bar], objective: str, seed: int, *, bar_number: int,
                    voices: Sequence[str], metadata: PieceMetadata,
                    view: LocalView | None = None, feedback: str = "",
                    n_bars: int = 0) -> EnhancedBarProposal:
        num, den = metadata.time_signature
        raw = self._ask(
            "composition", bar_number=bar_number, n_bars=n_bars, key=metadata.key,
            time_signature=f"{num}/{den}", objective=objective,
            local_objective=state.local_objective or objective,
            personality=personality.describe(),
            pheromones=view.describe() if view else "(no environment)",
            context=_bars_json(context), feedback=feedback or "(none)",
            voices=", ".join(voices), beats=metadata.beats_per_bar)
        return parse.parse_bar_proposal(raw, voices, metadata.beats_per_bar, bar_number)

    def assess_piece(self, piece: Piece, objective: str) -> tuple[float, str]:
        raw = self._ask("critic", objective=objective, context=json.dumps(piece_to_dict(piece)))
        return parse.parse_critic(raw)

    def peer_assess(self, piece: Piece, rater: int, target: int, objective: str,
                    rater_personality: PersonalityVector) -> DetailedPeerAssessment:
        lo, hi = max(1, target - 1), min(len(piece.bars), target + 1)
        raw = self._ask("peer_assessment", rater=rater, bar_number=target, objective=objective,
                        personality=rater_personality.describe(),
                        context=_bars_json([piece.bar(b) for b in range(lo, hi + 1)]))
        return parse.parse_assessment(raw, rater, target)

    def personality_deltas(self, agent: int, personality: PersonalityVector,
                           consensus: dict[str, float], feedback: Sequence[str],
                           objective: str, n_themes: int, seed: int,
                           context: Sequence[Bar] = ()) -> dict[str, float]:
        scores = ", ".join(f"{k}={v:.2f}" for k, v in sorted(consensus.items()))
        raw = self._ask("personality", bar_number=agent, personality=personality.describe(),
                        objective=objective, context=_bars_json(context),
                        feedback=scores + "\n" + "\n".join(feedback))
        return parse.parse_trait_deltas(raw)

    def compose_piece(self, n_bars: int, voices: Sequence[str], metadata: PieceMetadata,
                      objective: str, seed: int) -> str:
        num, den = metadata.time_signature
        return self._ask("single_shot", n_bars=n_bars, objective=objective,
                         voices=", ".join(voices), tempo=metadata.tempo_bpm,
                         time_signature=f"{num}/{den}", beats=metadata.beats_per_bar)

    def close(self) -> None:
        self.client.close()


Policy = StubPolicy | RemotePolicy


def make_policy(config: PolicyConfig, transport: httpx.BaseTransport | None = None) -> Policy:
    if config.kind == "remote":
        return RemotePolicy(config, transport=transport)
    return StubPolicy(config)


def propose_local_objective(state: AgentState, feedback: str, global_objective: str,
                            policy: Policy, n_bars: int = 0) -> str:
    """Pass A for one agent; the new objective is recorded in the agent's history."""
    text = policy.propose_objective(state, feedback, global_objective, n_bars)
    state.set_objective(text)
    return text
