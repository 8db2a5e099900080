from .agents import Policy, RemotePolicy, StubPolicy, make_policy, propose_local_objective
from .parse import MusicError, SchemaError, parse_bar_proposal, parse_piece
from .remote import (
    AuthError, ChatClient, LLMError, PolicyConfig, RateLimited, Timeout, TransportError,
    llm_complete,
)
from .state import (
    MEMORY_CAP, TRAITS, AgentState, DetailedPeerAssessment, EnhancedBarProposal,
    PersonalityVector, clamp_trait,
)
from .stub import deterministic_assess, deterministic_compose

__all__ = [
    "AgentState", "AuthError", "ChatClient", "DetailedPeerAssessment", "EnhancedBarProposal",
    "LLMError", "MEMORY_CAP", "MusicError", "PersonalityVector", "Policy", "PolicyConfig",
    "RateLimited", "RemotePolicy", "SchemaError", "StubPolicy", "TRAITS", "Timeout",
    "TransportError", "clamp_trait", "deterministic_assess", "deterministic_compose",
    "llm_complete", "make_policy", "parse_bar_proposal", "parse_piece",
    "propose_local_objective",
]
