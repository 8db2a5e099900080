import csv
import json

import numpy as np
import pytest

from swarmcomp import orchestrators as orc
from swarmcomp.policy import PolicyConfig, RemotePolicy, SchemaError, StubPolicy
from swarmcomp.policy.stub import deterministic_assess
from swarmcomp.score_model import load, validate_piece
from swarmcomp.swarm_env import EnvParams

from fake_llm import FakeLLM


def cfg(**kw):
    base = dict(system="swarm", n_bars=8, iterations=3, seed=7, workers=2)
    base.update(kw)
    return orc.RunConfig(**base)


def test_seed_piece():
    p = orc.seed_piece(1, ["Piano"])
    notes = p.bars[0].voices[0].notes
    assert [n.pitch for n in notes] == ["C4", "E4", "G4", "C5"]
    assert [n.duration for n in notes] == [1.0] * 4
    p8 = orc.seed_piece(8, ["Piano", "Bass"])
    assert validate_piece(p8, ["Piano", "Bass"]) == []
    assert p8 == orc.seed_piece(8, ["Piano", "Bass"])


def test_extract_context():
    p = orc.seed_piece(8, ["Piano"])
    assert len(orc.extract_context(p, 3, -1)) == 8
    assert [b.bar_number for b in orc.extract_context(p, 1, 1)] == [1, 2]
    assert [b.bar_number for b in orc.extract_context(p, 4, 2)] == [2, 3, 4, 5, 6]


def test_plateau_rule():
    assert not orc.plateaued([0.5, 0.5], 2)
    assert orc.plateaued([0.5, 0.5, 0.5], 2)
    assert not orc.plateaued([0.5, 0.5, 0.6], 2)
    assert not orc.plateaued([0.5] * 10, None)


def test_config_validation():
    for bad in (dict(system="x"), dict(n_bars=0), dict(iterations=0), dict(context_k=-2),
                dict(personality_init="gauss"), dict(voices=())):
        with pytest.raises(ValueError):
            cfg(**bad)


class Scripted(StubPolicy):
    """Stub composer with a scripted critic."""

    def __init__(self, scores):
        super().__init__()
        self.scores = list(scores)
        self.calls = 0

    def assess_piece(self, piece, objective):
        s = self.scores[self.calls]
        self.calls += 1
        if s is None:
            raise SchemaError("critic reply unparseable")
        return s, f"bar 1: stability={s}"


def test_critic_single_iteration_deterministic():
    a = orc.run(cfg(system="critic", iterations=1))
    b = orc.run(cfg(system="critic", iterations=1))
    assert len(a.scores) == 1
    assert a.summary() == b.summary()
    assert a.best_piece == b.best_piece


@pytest.mark.parametrize("scores,best", [([0.1, 0.2, 0.3], 3), ([0.3, 0.2, 0.1], 1),
                                         ([0.2, 0.4, 0.4], 3)])
def test_best_tracking(scores, best):
    r = orc.run_central_critic(cfg(system="critic", iterations=3), Scripted(scores))
    assert r.best_iteration == best
    assert r.best_score == max(scores)


def test_plateau_stops_after_third():
    r = orc.run_central_critic(cfg(system="critic", iterations=6, patience=2),
                               Scripted([0.5] * 6))
    assert r.iterations == [1, 2, 3]
    assert r.stopped_early


def test_critic_failure_skips_iteration():
    r = orc.run_central_critic(cfg(system="critic", iterations=3), Scripted([0.3, None, 0.4]))
    assert r.iterations == [1, 3]
    assert any(f["phase"] == "critic" for f in r.failures)


def test_swarm_shapes_and_bounds():
    r = orc.run(cfg(iterations=8))
    assert r.traits.shape == (8, 5, 9)
    assert np.all((r.traits >= 0.1) & (r.traits <= 0.9))
    assert all(0 <= s <= 1 for s in r.scores)
    assert r.best_score == max(r.scores)
    assert len(r.env_history) == 8


def test_swarm_bit_reproducible():
    a, b = orc.run(cfg(iterations=4, workers=4)), orc.run(cfg(iterations=4, workers=1))
    assert a.scores == b.scores
    assert np.array_equal(a.traits, b.traits)
    assert a.env_history == b.env_history


class Spy(StubPolicy):
    def __init__(self):
        super().__init__()
        self.seen = []

    def compose_bar(self, state, personality, context, objective, seed, **kw):
        self.seen.append(len(kw["view"].pheromones))
        return super().compose_bar(state, personality, context, objective, seed, **kw)


def test_total_decay_empties_map():
    spy = Spy()
    orc.run_swarm(cfg(iterations=3, workers=1, env=EnvParams(decay=1.0, floor=0.01)), spy)
    assert spy.seen and set(spy.seen) == {0}


def test_best_piece_rescores():
    r = orc.run(cfg(system="critic", iterations=3))
    assert deterministic_assess(r.best_piece, cfg().objective)[0] == \
        pytest.approx(r.best_score)


def test_single_shot_stub():
    r = orc.run(cfg(system="single"))
    assert r.status == "ok"
    assert len(r.scores) == 1
    assert validate_piece(r.best_piece, ["Piano"]) == []
    assert len(r.best_piece.bars) == 8


def test_single_shot_malformed_remote(tmp_path, monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "k")
    pc = PolicyConfig(kind="remote", endpoint="https://x/v1", model="m", backoff=0.0)
    fake = FakeLLM({"Compose a complete": "malformed"})
    r = orc.run(cfg(system="single", policy=pc, out_dir=str(tmp_path)),
                RemotePolicy(pc, fake.transport()))
    assert r.status == "failed"
    assert fake.calls == 1
    assert "not json" in (tmp_path / "raw_response.txt").read_text()


def test_persistence_layout(tmp_path):
    r = orc.run(cfg(iterations=3, out_dir=str(tmp_path)))
    for t in (1, 2, 3):
        d = tmp_path / f"iter_{t}"
        for name in ("bars.json", "agent_states.json", "consensus.json", "environment.json",
                     "piece.mid"):
            assert (d / name).is_file()
        piece = load(d / "bars.json")
        assert validate_piece(piece, ["Piano"]) == []
    best = json.loads((tmp_path / "best_composition.json").read_text())
    with (tmp_path / "score_history.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert best["best_score"] == max(float(x["sigma"]) for x in rows)
    assert sum(int(x["is_best"]) for x in rows) == 1
    assert load(tmp_path / "best_composition.json") == r.best_piece


def test_critic_persistence(tmp_path):
    orc.run(cfg(system="critic", iterations=2, out_dir=str(tmp_path)))
    fb = json.loads((tmp_path / "iter_2" / "critic_feedback.json").read_text())
    assert set(fb) >= {"sigma", "justification", "per_bar"}


def test_remote_swarm_survives_faults(monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "k")
    pc = PolicyConfig(kind="remote", endpoint="https://x/v1", model="m", backoff=0.0,
                      max_retries=1)
    fake = FakeLLM({r"composer agent for bar 3 ": "malformed",
                    r"composer agent for bar 5 ": "error",
                    r"agent 2 reviewing": "timeout",
                    r"You are agent 6\.": "malformed"})
    r = orc.run_swarm(cfg(n_bars=6, iterations=2, policy=pc), RemotePolicy(pc, fake.transport()))
    assert r.status == "ok"
    assert r.degraded == {1: [3, 5], 2: [3, 5]}
    # degraded bars keep the previous draft
    assert [n.pitch for n in r.best_piece.bar(3).voices[0].notes] == ["C4", "E4", "G4", "C5"]
    phases = {f["phase"] for f in r.failures}
    assert {"compose", "assess", "evolve"} <= phases
    assert validate_piece(r.best_piece, ["Piano"]) == []
