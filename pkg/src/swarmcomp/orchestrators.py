"""The three composition loops: central critic, stigmergic swarm and single shot."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import consensus as cons
from .policy import (
    AgentState, LLMError, MusicError, PersonalityVector, PolicyConfig, SchemaError, TRAITS,
    make_policy, parse_piece, propose_local_objective,
)
from .policy.stub import deterministic_assess, feedback_for_bar
from .rng import generator, substream
from .score_model import (
    Bar, NoteEvent, Piece, PieceMetadata, VoiceLine, assemble_piece, piece_to_dict, to_json,
    to_midi,
)
from .swarm_env import EnvParams, Environment, merge_deposits, sense, update_environment

log = logging.getLogger(__name__)

SEED_PATTERN = ("C4", "E4", "G4", "C5")
POLICY_ERRORS = (SchemaError, MusicError, LLMError, ValueError)


@dataclass
class RunConfig:
    system: str = "swarm"
    n_bars: int = 8
    voices: tuple[str, ...] = ("Piano",)
    iterations: int = 8
    context_k: int = -1
    radius: int = 2
    peer_range: int = 1
    objective: str = "Compose a coherent, expressive piece with a memorable recurring motif."
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    personality_init: str = "uniform"
    seed: int = 0
    out_dir: str | None = None
    metadata: PieceMetadata = field(default_factory=PieceMetadata)
    env: EnvParams = field(default_factory=EnvParams)
    reward_weights: dict = field(default_factory=lambda: dict(cons.REWARD_WEIGHTS))
    patience: int | None = None
    plateau_eps: float = 1e-3
    sigma_source: str = "consensus"
    workers: int = 4

    def __post_init__(self):
        self.voices = tuple(self.voices)
        if self.system not in ("critic", "swarm", "single"):
            raise ValueError(f"unknown system {self.system!r}")
        if self.n_bars < 1 or self.iterations < 1 or self.context_k < -1:
            raise ValueError("need n_bars >= 1, iterations >= 1, context_k >= -1")
        if self.personality_init not in ("uniform", "random"):
            raise ValueError("personality_init must be uniform or random")
        if self.sigma_source not in ("consensus", "critic"):
            raise ValueError("sigma_source must be consensus or critic")
        if not self.voices:
            raise ValueError("at least one voice is required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["voices"] = list(self.voices)
        d["metadata"]["time_signature"] = list(self.metadata.time_signature)
        return d


@dataclass
class RunResult:
    system: str
    best_piece: Piece | None
    best_score: float | None
    best_iteration: int | None
    scores: list[float] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    traits: np.ndarray | None = None
    env_history: list[dict] = field(default_factory=list)
    degraded: dict[int, list[int]] = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)
    status: str = "ok"
    raw_response: str | None = None
    stopped_early: bool = False

    def summary(self) -> dict:
        return {
            "system": self.system, "status": self.status, "best_score": self.best_score,
            "best_iteration": self.best_iteration, "scores": self.scores,
            "iterations": self.iterations, "stopped_early": self.stopped_early,
            "degraded": {str(k): v for k, v in sorted(self.degraded.items())},
            "failures": self.failures,
        }


# --------------------------------------------------------------------------
# helpers

def seed_piece(n_bars: int, voices: Sequence[str], metadata: PieceMetadata | None = None) -> Piece:
    """C-major arpeggio quarters (C4 E4 G4 C5, cycled) in every voice of every bar."""
    metadata = metadata or PieceMetadata()
    beats = metadata.beats_per_bar
    n = int(beats)
    pattern = [SEED_PATTERN[k % len(SEED_PATTERN)] for k in range(n)]
    durs = [1.0] * n
    if beats - n > 1e-9:
        pattern.append(SEED_PATTERN[n % len(SEED_PATTERN)])
        durs.append(beats - n)
    bars = [Bar(i, [VoiceLine(v, [NoteEvent(p, d) for p, d in zip(pattern, durs)])
                    for v in voices], "seed")
            for i in range(1, n_bars + 1)]
    return Piece(bars, metadata)


def extract_context(piece: Piece, i: int, k: int) -> list[Bar]:
    if k == -1:
        return list(piece.bars)
    return [b for b in piece.bars if abs(b.bar_number - i) <= k]


def plateaued(scores: Sequence[float], patience: int | None, eps: float = 1e-3) -> bool:
    """True once the last `patience` scores fail to beat the earlier best by more than eps."""
    if not patience or len(scores) <= patience:
        return False
    return max(scores[-patience:]) <= max(scores[:-patience]) + eps


def initial_personalities(config: RunConfig) -> dict[int, PersonalityVector]:
    if config.personality_init == "uniform":
        return {i: PersonalityVector() for i in range(1, config.n_bars + 1)}
    rng = generator(config.seed, "personality")
    return {i: PersonalityVector.from_array(rng.uniform(0.1, 0.9, len(TRAITS)))
            for i in range(1, config.n_bars + 1)}


def _fan_out(workers: int, fn: Callable, items: Sequence) -> list:
    """Ordered parallel map; results line up with items regardless of finish order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _guarded(fn: Callable) -> Callable:
    def run(x):
        try:
            return fn(x), None
        except POLICY_ERRORS as exc:
            return None, exc
    return run


class _Tracker:
    def __init__(self):
        self.scores: list[float] = []
        self.iterations: list[int] = []
        self.best: Piece | None = None
        self.best_score: float | None = None
        self.best_iteration: int | None = None

    def update(self, t: int, sigma: float, piece: Piece) -> bool:
        self.scores.append(sigma)
        self.iterations.append(t)
        if self.best_score is None or sigma >= self.best_score:
            self.best, self.best_score, self.best_iteration = piece, sigma, t
            return True
        return False


# --------------------------------------------------------------------------
# persistence

def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def persist_iteration(out_dir: str | Path, t: int, piece: Piece, states: dict[int, AgentState],
                      personalities: dict[int, PersonalityVector] | None = None,
                      feedback: dict | None = None, env: Environment | None = None,
                      consensus: cons.ConsensusReport | None = None) -> list[Path]:
    d = Path(out_dir) / f"iter_{t}"
    d.mkdir(parents=True, exist_ok=True)
    paths = [d / "bars.json"]
    paths[0].write_text(to_json(piece) + "\n", encoding="utf-8")
    agents = []
    for i in sorted(states):
        row = states[i].to_dict()
        if personalities:
            row["personality"] = personalities[i].to_dict()
        agents.append(row)
    paths.append(_write_json(d / "agent_states.json", agents))
    if feedback is not None:
        paths.append(_write_json(d / "critic_feedback.json", feedback))
    if consensus is not None:
        paths.append(_write_json(d / "consensus.json", consensus.to_dict()))
    if env is not None:
        paths.append(_write_json(d / "environment.json", env.to_dict()))
    midi = d / "piece.mid"
    midi.write_bytes(to_midi(piece))
    paths.append(midi)
    return paths


def persist_final(out_dir: str | Path, result: RunResult) -> list[Path]:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    if result.best_piece is not None:
        paths.append(_write_json(d / "best_composition.json", {
            "best_score": result.best_score, "best_iteration": result.best_iteration,
            "piece": piece_to_dict(result.best_piece)}))
    hist = d / "score_history.csv"
    with hist.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "sigma", "is_best"])
        for t, s in zip(result.iterations, result.scores):
            w.writerow([t, repr(s), int(t == result.best_iteration)])
    paths.append(hist)
    if result.traits is not None:
        tp = d / "traits.csv"
        with tp.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "agent", "trait", "value"])
            n, k, snaps = result.traits.shape
            for t in range(snaps):
                for i in range(n):
                    for j in range(k):
                        v = result.traits[i, j, t]
                        if np.isfinite(v):
                            w.writerow([t, i + 1, TRAITS[j], repr(float(v))])
        paths.append(tp)
    paths.append(_write_json(d / "run_summary.json", result.summary()))
    return paths


# --------------------------------------------------------------------------
# central critic

def run_central_critic(config: RunConfig, policy=None) -> RunResult:
    own = policy is None
    policy = policy or make_policy(config.policy)
    md, voices, n = config.metadata, config.voices, config.n_bars
    states = {i: AgentState(i) for i in range(1, n + 1)}
    personalities = initial_personalities(config)
    piece = seed_piece(n, voices, md)
    psi = ""
    tracker = _Tracker()
    result = RunResult("critic", None, None, None)
    try:
        for t in range(1, config.iterations + 1):
            # Pass A: reflection and objective update
            def reflect(i):
                fb = feedback_for_bar(psi, i) or psi
                return propose_local_objective(states[i], fb, config.objective, policy, n)
            for i, (_, err) in zip(states, _fan_out(1, _guarded(reflect), list(states))):
                if err is not None:
                    result.failures.append({"iteration": t, "phase": "reflect", "agent": i,
                                            "error": str(err)})

            # Pass B: compose against the current draft
            def compose(i):
                return policy.compose_bar(
                    states[i], personalities[i], extract_context(piece, i, config.context_k),
                    config.objective, substream(config.seed, "compose", t, i), bar_number=i,
                    voices=voices, metadata=md, feedback=feedback_for_bar(psi, i) or psi,
                    n_bars=n)
            outs = _fan_out(config.workers, _guarded(compose), list(states))
            bars = _collect_bars(outs, piece, t, result)
            draft = assemble_piece(bars, md)

            try:
                sigma, justification = policy.assess_piece(draft, config.objective)
            except POLICY_ERRORS as exc:
                log.error("critic failed at iteration %d: %s", t, exc)
                result.failures.append({"iteration": t, "phase": "critic", "error": str(exc)})
                continue
            piece, psi = draft, justification
            for i in states:
                states[i].remember_action(piece.bar(i))
                states[i].remember_feedback(feedback_for_bar(psi, i) or psi)
            tracker.update(t, sigma, piece)
            if config.out_dir:
                persist_iteration(config.out_dir, t, piece, states, personalities,
                                  feedback={"iteration": t, "sigma": sigma, "justification": psi,
                                            "per_bar": {str(i): feedback_for_bar(psi, i)
                                                        for i in states}})
            if plateaued(tracker.scores, config.patience, config.plateau_eps):
                result.stopped_early = True
                break
    finally:
        if own:
            policy.close()
    return _finish(result, tracker, config)


def _collect_bars(outs, piece: Piece, t: int, result: RunResult) -> list[Bar]:
    """New bars where the agent succeeded; the previous bar otherwise."""
    bars = []
    for i, (prop, err) in enumerate(outs, start=1):
        if err is None:
            bars.append(prop.to_bar(i))
        else:
            log.warning("agent %d failed at iteration %d, keeping its bar: %s", i, t, err)
            result.degraded.setdefault(t, []).append(i)
            result.failures.append({"iteration": t, "phase": "compose", "agent": i,
                                    "error": str(err)})
            bars.append(piece.bar(i))
    return bars


def _finish(result: RunResult, tracker: _Tracker, config: RunConfig) -> RunResult:
    result.scores, result.iterations = tracker.scores, tracker.iterations
    result.best_piece, result.best_score = tracker.best, tracker.best_score
    result.best_iteration = tracker.best_iteration
    if not result.scores:
        result.status = "failed"
    if config.out_dir:
        persist_final(config.out_dir, result)
    return result


# --------------------------------------------------------------------------
# stigmergic swarm

def run_swarm(config: RunConfig, policy=None) -> RunResult:
    own = policy is None
    policy = policy or make_policy(config.policy)
    md, voices, n, params = config.metadata, config.voices, config.n_bars, config.env
    agents = list(range(1, n + 1))
    states = {i: AgentState(i, config.objective) for i in agents}
    personalities = initial_personalities(config)
    traits = np.full((n, len(TRAITS), config.iterations + 1), np.nan)
    for i in agents:
        traits[i - 1, :, 0] = personalities[i].as_array()
    piece = seed_piece(n, voices, md)
    env = Environment()
    merge_deposits(env, piece.bars, 0, params)
    tracker = _Tracker()
    result = RunResult("swarm", None, None, None)
    feedback: dict[int, list[str]] = {i: [] for i in agents}
    try:
        for t in range(1, config.iterations + 1):
            update_environment(env, params)
            snap = env.snapshot()

            def compose(i):
                view = sense(snap, i, config.radius)
                return policy.compose_bar(
                    states[i], personalities[i], extract_context(piece, i, config.context_k),
                    config.objective, substream(config.seed, "compose", t, i), bar_number=i,
                    voices=voices, metadata=md, view=view, feedback="\n".join(feedback[i]),
                    n_bars=n)
            bars = _collect_bars(_fan_out(config.workers, _guarded(compose), agents),
                                 piece, t, result)
            fresh = [b for b in bars if b.bar_number not in result.degraded.get(t, [])]
            merge_deposits(env, fresh, t, params)
            piece = assemble_piece(bars, md)
            for b in bars:
                states[b.bar_number].remember_action(b)

            failures: list[dict] = []

            def assess(j):
                return cons.assess_neighborhood(piece, j, config.peer_range, config.objective,
                                                policy, personalities, failures)
            per_bar = dict(zip(agents, _fan_out(config.workers, assess, agents)))
            for f in sorted(failures, key=lambda f: (f["target"], f["rater"])):
                result.failures.append({"iteration": t, "phase": "assess", **f})
            report = cons.aggregate(per_bar)
            sigma = report.sigma
            if config.sigma_source == "critic":
                try:
                    sigma, _ = policy.assess_piece(piece, config.objective)
                except POLICY_ERRORS as exc:
                    result.failures.append({"iteration": t, "phase": "critic",
                                            "error": str(exc)})
            rewards = {b: cons.shaped_reward(c, config.reward_weights)
                       for b, c in report.bars.items()}
            cons.update_env_from_consensus(env, rewards, params.reinforce, params.decay)

            for i in agents:
                feedback[i] = [a.suggestions for a in per_bar[i] if a.suggestions]
                states[i].remember_feedback("; ".join(feedback[i]))
                bc = report.bars.get(i)

                def request(i=i, bc=bc):
                    if bc is None:
                        raise ValueError(f"bar {i} was not assessed")
                    return policy.personality_deltas(
                        i, personalities[i], bc.means, feedback[i], config.objective,
                        len(env.emergent_themes), substream(config.seed, "evolve", t, i),
                        extract_context(piece, i, 1))
                personalities[i], fell_back = cons.evolve_personality(
                    personalities[i], request, substream(config.seed, "drift", t, i))
                if fell_back:
                    result.failures.append({"iteration": t, "phase": "evolve", "agent": i})
                traits[i - 1, :, t] = personalities[i].as_array()

            tracker.update(t, sigma, piece)
            result.env_history.append(env.to_dict())
            if config.out_dir:
                persist_iteration(config.out_dir, t, piece, states, personalities,
                                  env=env, consensus=report)
            if plateaued(tracker.scores, config.patience, config.plateau_eps):
                result.stopped_early = True
                traits = traits[:, :, : t + 1]
                break
    finally:
        if own:
            policy.close()
    result.traits = traits
    return _finish(result, tracker, config)


# --------------------------------------------------------------------------
# single shot

def run_single_shot(config: RunConfig, policy=None) -> RunResult:
    """One call, strict parse, no repair. The draft is scored by the offline critic."""
    own = policy is None
    policy = policy or make_policy(config.policy)
    result = RunResult("single", None, None, None)
    tracker = _Tracker()
    raw = ""
    try:
        raw = policy.compose_piece(config.n_bars, config.voices, config.metadata,
                                   config.objective, substream(config.seed, "single"))
        piece = parse_piece(raw, config.voices, config.n_bars, config.metadata.beats_per_bar,
                            config.metadata.tempo_bpm)
    except POLICY_ERRORS as exc:
        log.error("single-shot composition failed: %s", exc)
        result.failures.append({"iteration": 1, "phase": "compose", "error": str(exc)})
        result.raw_response = raw
        if config.out_dir:
            Path(config.out_dir).mkdir(parents=True, exist_ok=True)
            (Path(config.out_dir) / "raw_response.txt").write_text(raw or "", encoding="utf-8")
        return _finish(result, tracker, config)
    finally:
        if own:
            policy.close()
    sigma, psi = deterministic_assess(piece, config.objective)
    tracker.update(1, sigma, piece)
    result.raw_response = raw
    if config.out_dir:
        persist_iteration(config.out_dir, 1, piece, {}, feedback={"iteration": 1, "sigma": sigma,
                                                                  "justification": psi})
    return _finish(result, tracker, config)


RUNNERS = {"critic": run_central_critic, "swarm": run_swarm, "single": run_single_shot}


def run(config: RunConfig, policy=None) -> RunResult:
    return RUNNERS[config.system](config, policy)
