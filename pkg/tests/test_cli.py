import csv
import json
from pathlib import Path

import pytest

from fake_llm import FakeLLM
from swarmcomp import __version__
from swarmcomp.cli import (
    DEFAULTS, UsageError, build_parser, git_blob_hash, main, read_config_file, resolve,
)
from swarmcomp.equilibrium import simulate
from swarmcomp.score_model import load, validate_piece


def run(argv, capsys, transport=None):
    code = main(argv, transport)
    out, err = capsys.readouterr()
    return code, out, err


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


@pytest.fixture
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "a"
    code = main(["compose", "--system", "swarm", "--bars", "4", "--iterations", "2",
                 "--seed", "3", "--out", str(out), "--no-figures"])
    assert code == 0
    return out


# parsing and configuration

def test_unknown_flag_exits_one(capsys):
    code, _, err = run(["compose", "--bogus"], capsys)
    assert code == 1
    assert "usage:" in err


def test_missing_subcommand(capsys):
    assert run([], capsys)[0] == 1


def test_version(capsys):
    code, out, _ = run(["--version"], capsys)
    assert code == 0 and __version__ in out


def test_only_typed_flags_reach_the_merge():
    ns = build_parser().parse_args(["compose", "--bars", "5"])
    assert {k: v for k, v in vars(ns).items() if k not in ("command", "verbose")} == {"bars": 5}


def test_precedence():
    file_data = {"compose": {"bars": 6, "seed": 11}}
    cfg = resolve("compose", {"bars": 9}, file_data)
    assert cfg["bars"] == 9
    assert cfg["seed"] == 11
    assert cfg["iterations"] == DEFAULTS["compose"]["iterations"]
    assert resolve("compose", {}, {"bars": 2})["bars"] == 2


def test_unknown_config_key():
    with pytest.raises(UsageError):
        resolve("compose", {}, {"compose": {"bras": 3}})


def test_toml_and_json_configs(tmp_path):
    (tmp_path / "c.toml").write_text('[compose]\nbars = 3\npeer-range = 2\n')
    (tmp_path / "c.json").write_text(json.dumps({"bars": 3, "peer_range": 2}))
    a = resolve("compose", {}, read_config_file(tmp_path / "c.toml"))
    b = resolve("compose", {}, read_config_file(tmp_path / "c.json"))
    assert a == b and a["peer_range"] == 2


def test_bad_config_value_exits_one(tmp_path, capsys):
    (tmp_path / "c.toml").write_text('[compose]\nwat = 1\n')
    assert run(["compose", "--config", str(tmp_path / "c.toml")], capsys)[0] == 1


def test_flags_round_trip_through_config(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["compose", "--bars", "3", "--iterations", "2", "--seed", "5", "--k", "2",
                "--out", str(a), "--no-figures"], capsys)[0] == 0
    cfg = json.loads((a / "manifest.json").read_text())["config"]
    cfg["compose"]["out"] = str(b)
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert run(["compose", "--config", str(tmp_path / "cfg.json")], capsys)[0] == 0
    assert tree(a) == tree(b)
    cb = json.loads((b / "manifest.json").read_text())["config"]["compose"]
    assert cb["k"] == 2 and cb["bars"] == 3


# manifests

def test_manifest_is_complete(small_run):
    m = json.loads((small_run / "manifest.json").read_text())
    assert m["schema_version"] == 1 and m["version"] == __version__
    assert m["status"] == "ok" and m["seeds"] == {"seed": 3}
    assert m["command"][:2] == ["swarmcomp", "compose"]
    assert m["started"] <= m["finished"]
    assert set(m["outputs"]) == set(tree(small_run))
    assert m["config"]["compose"]["system"] == "swarm"


def test_git_blob_hash():
    # `printf 'hello\n' | git hash-object --stdin`
    assert git_blob_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_manifest_replay_is_byte_identical(small_run, tmp_path, capsys):
    again = tmp_path / "again"
    code = run(["compose", "--config", str(small_run / "manifest.json"), "--out", str(again)],
               capsys)[0]
    assert code == 0
    assert tree(again) == tree(small_run)


# analyses

def test_graph_report_on_stdout(small_run, capsys):
    code, out, _ = run(["analyze", "graph", "--in", str(small_run / "best_composition.json"),
                        "--n-null", "3"], capsys)
    assert code == 0
    doc = json.loads(out)
    r = doc["report"]["best_composition"]
    assert r["frames"] == 16
    assert {"LR_EF", "PC"} <= set(r["longrange"])
    assert doc["manifest"]["inputs"][0]["bytes"] > 0


def test_graph_outputs(small_run, tmp_path, capsys):
    out = tmp_path / "g"
    assert run(["analyze", "graph", "--in", str(small_run / "best_composition.json"),
                "--n-null", "3", "--out", str(out)], capsys)[0] == 0
    report = json.loads((out / "report.json").read_text())["best_composition"]
    with (out / "best_composition_edges.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) == report["metrics"]["edges"]
    with (out / "best_composition_communities.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) == 16
    assert (out / "figures" / "best_composition_ssm.png").stat().st_size > 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert "figures/best_composition_novelty.png" in manifest["outputs"]


def test_musicology_outputs(small_run, tmp_path, capsys):
    out = tmp_path / "mu"
    pieces = [str(small_run / "best_composition.json"), str(small_run / "iter_1" / "bars.json"),
              str(small_run / "iter_2" / "bars.json")]
    assert run(["analyze", "musicology", "--in", *pieces, "--out", str(out)], capsys)[0] == 0
    with (out / "comparison.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["piece"] for r in rows] == ["best_composition", "bars", "iter_2_bars"]
    for r in rows:
        assert json.loads((out / f"{r['piece']}.json").read_text())["creative"]["note_count"] > 0


def test_multiscale_outputs(small_run, tmp_path, capsys):
    out = tmp_path / "ms"
    assert run(["analyze", "multiscale", "--in", str(small_run / "best_composition.json"),
                "--n-null", "3", "--out", str(out)], capsys)[0] == 0
    for name in ("levels.csv", "persistence.csv", "sankey.json", "spectra.json"):
        assert (out / f"best_composition_{name}").is_file()


def test_equilibrium_outputs(small_run, tmp_path, capsys):
    out = tmp_path / "eq"
    code = run(["equilibrium", "--traits", str(small_run / "traits.csv"), "--out", str(out)],
               capsys)[0]
    assert code == 0
    fits = json.loads((out / "fits.json").read_text())
    assert len(fits["traits"]) == 5 and fits["n_agents"] == 4
    assert set(json.loads((out / "calibration.json").read_text())) >= {"lambda", "delta"}
    assert (out / "residuals.csv").read_text().startswith("agent,risk_taking")


def test_equilibrium_on_synthetic_csv(tmp_path, capsys):
    x = simulate(0.436, 0.104, 0.411, 16, 1, 13, seed=0)
    rows = ["iteration,agent,trait,value"]
    rows += [f"{t},{i + 1},risk_taking,{float(x[i, 0, t])!r}" for t in range(13) for i in range(16)]
    (tmp_path / "t.csv").write_text("\n".join(rows) + "\n")
    code, out, _ = run(["equilibrium", "--traits", str(tmp_path / "t.csv"), "--no-figures"], capsys)
    fit = json.loads(out)["report"]["fit"]["traits"][0]
    assert code == 0 and fit["n"] == 192
    assert fit["alpha"] == pytest.approx(0.436, abs=1e-9)


def test_missing_inputs_exit_one(tmp_path, capsys):
    assert run(["analyze", "graph", "--in", str(tmp_path / "nope.json")], capsys)[0] == 1
    assert run(["equilibrium"], capsys)[0] == 1
    (tmp_path / "bad.json").write_text("{\"bars\": 3}")
    assert run(["analyze", "musicology", "--in", str(tmp_path / "bad.json")], capsys)[0] == 1


def test_particles_command(tmp_path, capsys):
    out = tmp_path / "p"
    code, stdout, _ = run(["particles", "--rule", "morse", "--steps", "20", "--n", "64",
                           "--stride", "10", "--out", str(out)], capsys)
    assert code == 0
    assert json.loads(stdout)["summary"]["steps"] == 20
    with (out / "config.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 64 and set(rows[0]) == {"x", "y", "psi6"}
    assert json.loads((out / "params.json").read_text())["n"] == 64
    assert json.loads((out / "manifest.json").read_text())["seeds"] == {"seed": 42}


# remote policy through the CLI

def remote_args(out, *extra):
    return ["compose", "--policy", "remote", "--endpoint", "https://llm.invalid/v1",
            "--model", "m", "--max-retries", "1", "--bars", "4", "--iterations", "2",
            "--out", str(out), "--no-figures", *extra]


def test_remote_faults_degrade_but_complete(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "sk-test-secret-123")
    fake = FakeLLM({r"composer agent for bar 2 ": "malformed",
                    r"composer agent for bar 4 ": "error",
                    r"agent 1 reviewing": "timeout"})
    out = tmp_path / "r"
    code = run(remote_args(out), capsys, fake.transport())[0]
    assert code == 0
    summary = json.loads((out / "run_summary.json").read_text())
    assert summary["degraded"] == {"1": [2, 4], "2": [2, 4]}
    m = json.loads((out / "manifest.json").read_text())
    assert m["status"] == "ok" and set(m["outputs"]) == set(tree(out))
    assert validate_piece(load(out / "best_composition.json"), ["Piano"]) == []
    for blob in tree(out).values():
        assert b"sk-test-secret-123" not in blob
    assert b"sk-test-secret-123" not in (out / "manifest.json").read_bytes()


def test_remote_single_shot_failure_exits_two(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "k")
    out = tmp_path / "s"
    fake = FakeLLM({"Compose a complete": "malformed"})
    code, _, err = run(remote_args(out, "--system", "single"), capsys, fake.transport())
    assert code == 2 and "failed" in err
    m = json.loads((out / "manifest.json").read_text())
    assert m["status"] == "failed"
    assert "raw_response.txt" in m["outputs"]


def test_remote_without_key_is_rejected(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("LLM_API_KEY", raising=False)
    fake = FakeLLM()
    code, _, err = run(remote_args(tmp_path / "k"), capsys, fake.transport())
    assert code == 1 and fake.calls == 0
    assert "$LLM_API_KEY" in err
