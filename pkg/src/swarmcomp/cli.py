"""Command-line entry point.

    swarmcomp compose --system swarm --bars 8 --iterations 8 --policy stub --seed 7 --out runs/a
    swarmcomp analyze graph --in runs/a/best_composition.json
    swarmcomp equilibrium --traits runs/a/traits.csv --out runs/a/eq
    swarmcomp particles --rule morse --out runs/morse

Options resolve as flag > config file (TOML or JSON, ``--config``) > default.
A manifest from an earlier run is accepted as a config file. Exit codes: 0 ok,
1 validation or usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .policy import LLMError, PolicyConfig
from .score_model import PieceMetadata, ScoreError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("swarmcomp")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


DEFAULTS: dict[str, dict[str, Any]] = {
    "compose": {
        "system": "swarm", "bars": 8, "voices": "Piano", "iterations": 8,
        "objective": None, "objective_file": None, "policy": "stub", "endpoint": None,
        "model": None, "api_key_env": "LLM_API_KEY", "timeout": 60.0, "max_retries": 3,
        "seed": 0, "k": -1, "radius": 2, "peer_range": 1, "personality_init": "uniform",
        "sigma_source": "consensus", "patience": None, "key": "C major", "tempo": 120.0,
        "workers": 4, "out": "runs/compose", "figures": True,
    },
    "musicology": {"inputs": [], "out": None, "voice": "upper", "figures": True},
    "graph": {"inputs": [], "out": None, "frame_len": 1.0, "k": 6, "n_null": 20, "seed": 0,
              "window": 4, "figures": True},
    "multiscale": {"inputs": [], "out": None, "frame_len": 1.0, "k": 6, "levels": 8,
                   "top_k": 6, "n_null": 20, "seed": 0, "figures": True},
    "equilibrium": {"traits": None, "out": None, "figures": True},
    "particles": {"rule": "lj", "steps": None, "seed": 42, "n": 1024, "rho": 0.8,
                  "stride": 50, "dr": 0.05, "out": "runs/particles"},
}


def _common(p: argparse.ArgumentParser, figures: bool = True) -> None:
    p.add_argument("--config", help="TOML or JSON config file (or an earlier manifest.json)")
    if figures:
        p.add_argument("--no-figures", dest="figures", action="store_false",
                       help="skip rendering PNG figures")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = _Parser(prog="swarmcomp", description="swarm composition and analysis toolkit",
                     argument_default=S)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("compose", help="run a composition loop", argument_default=S)
    c.add_argument("--system", choices=["critic", "swarm", "single"])
    c.add_argument("--bars", type=int)
    c.add_argument("--voices", help="comma-separated instrument names")
    c.add_argument("--iterations", type=int)
    obj = c.add_mutually_exclusive_group()
    obj.add_argument("--objective")
    obj.add_argument("--objective-file")
    c.add_argument("--policy", choices=["stub", "remote"])
    c.add_argument("--endpoint", help="chat-completions URL for the remote policy")
    c.add_argument("--model")
    c.add_argument("--api-key-env", help="name of the environment variable holding the key")
    c.add_argument("--timeout", type=float)
    c.add_argument("--max-retries", type=int)
    c.add_argument("--seed", type=int)
    c.add_argument("--k", type=int, help="context window in bars (-1 = whole piece)")
    c.add_argument("--radius", type=int)
    c.add_argument("--peer-range", type=int)
    c.add_argument("--personality-init", choices=["uniform", "random"])
    c.add_argument("--sigma-source", choices=["consensus", "critic"])
    c.add_argument("--patience", type=int)
    c.add_argument("--key")
    c.add_argument("--tempo", type=float)
    c.add_argument("--workers", type=int)
    c.add_argument("--out")
    _common(c)

    a = sub.add_parser("analyze", help="analyze piece files", argument_default=S)
    asub = a.add_subparsers(dest="analysis", required=True, parser_class=_Parser)
    m = asub.add_parser("musicology", argument_default=S)
    m.add_argument("--voice")
    g = asub.add_parser("graph", argument_default=S)
    g.add_argument("--window", type=int)
    ms = asub.add_parser("multiscale", argument_default=S)
    ms.add_argument("--levels", type=int)
    ms.add_argument("--top-k", type=int)
    for p in (m, g, ms):
        p.add_argument("--in", dest="inputs", nargs="+", metavar="PIECE")
        p.add_argument("--out")
        _common(p)
    for p in (g, ms):
        p.add_argument("--frame-len", type=float)
        p.add_argument("--k", type=int)
        p.add_argument("--n-null", type=int)
        p.add_argument("--seed", type=int)

    e = sub.add_parser("equilibrium", help="fit best-response maps to trait trajectories",
                       argument_default=S)
    e.add_argument("--traits", help="traits.csv from a swarm run")
    e.add_argument("--out")
    _common(e)

    pl = sub.add_parser("particles", help="run a particle self-assembly experiment",
                        argument_default=S)
    pl.add_argument("--rule", choices=["lj", "morse", "salr", "vicsek"])
    pl.add_argument("--steps", type=int)
    pl.add_argument("--seed", type=int)
    pl.add_argument("--n", type=int)
    pl.add_argument("--rho", type=float)
    pl.add_argument("--stride", type=int)
    pl.add_argument("--dr", type=float)
    pl.add_argument("--out")
    _common(pl, figures=False)
    return parser


# --------------------------------------------------------------------------
# configuration

def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".toml":
        data = tomllib.loads(raw.decode("utf-8"))
    else:
        data = json.loads(raw)
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a table/object")
    if "schema_version" in data and "config" in data:
        data = data["config"]
    return data


def resolve(section: str, flags: dict, file_data: dict | None = None) -> dict:
    """Merge defaults, the config section and explicit flags, in rising precedence."""
    cfg = dict(DEFAULTS[section])
    if file_data:
        layer = file_data.get(section, file_data)
        if isinstance(layer, dict):
            layer = {k.replace("-", "_"): v for k, v in layer.items()
                     if not isinstance(v, dict) or k not in DEFAULTS}
            unknown = sorted(set(layer) - set(cfg))
            if unknown:
                raise UsageError(f"unknown config key(s) for {section}: {', '.join(unknown)}")
            cfg.update(layer)
    cfg.update({k: v for k, v in flags.items() if k in cfg})
    return cfg


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def describe_input(path: str | Path) -> dict:
    data = Path(path).read_bytes()
    return {"path": str(path), "bytes": len(data), "git_blob": git_blob_hash(data),
            "sha256": hashlib.sha256(data).hexdigest()}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default)


def write_manifest(out_dir: Path | None, manifest: dict) -> Path | None:
    if out_dir is None:
        return None
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    path.write_text(dumps(manifest) + "\n", encoding="utf-8")
    return path


def _outputs(out_dir: Path) -> list[str]:
    return sorted(str(p.relative_to(out_dir)) for p in out_dir.rglob("*")
                  if p.is_file() and p.name != "manifest.json")


def _unique_stem(path: Path, taken) -> str:
    name = path.stem
    if name in taken:
        name = f"{path.parent.name}_{path.stem}"
    base, i = name, 2
    while name in taken:
        name, i = f"{base}_{i}", i + 1
    return name


def _load_pieces(paths: Sequence[str]):
    from .score_model import load

    if not paths:
        raise UsageError("no input pieces given (--in)")
    out = []
    for p in paths:
        if not Path(p).is_file():
            raise UsageError(f"input not found: {p}")
        try:
            out.append((Path(p), load(p)))
        except (ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"{p}: not a readable piece ({exc})") from exc
    return out


# --------------------------------------------------------------------------
# commands

def cmd_compose(cfg: dict, transport=None) -> tuple[dict, Path, list[dict]]:
    from .orchestrators import RunConfig, run
    from .plotting import score_history, trait_trajectories

    inputs = []
    objective = cfg["objective"]
    if cfg["objective_file"]:
        path = Path(cfg["objective_file"])
        if not path.is_file():
            raise UsageError(f"objective file not found: {path}")
        objective = path.read_text(encoding="utf-8").strip()
        inputs.append(describe_input(path))
    voices = cfg["voices"]
    voices = [v.strip() for v in voices.split(",")] if isinstance(voices, str) else list(voices)
    out = Path(cfg["out"])
    if cfg["policy"] == "remote" and not os.environ.get(cfg["api_key_env"]):
        raise UsageError(f"remote policy needs the API key in ${cfg['api_key_env']}")
    policy = PolicyConfig(kind=cfg["policy"], endpoint=cfg["endpoint"], model=cfg["model"],
                          api_key_env=cfg["api_key_env"], timeout=cfg["timeout"],
                          max_retries=cfg["max_retries"], seed=cfg["seed"])
    kwargs = dict(system=cfg["system"], n_bars=cfg["bars"], voices=tuple(voices),
                  iterations=cfg["iterations"], context_k=cfg["k"], radius=cfg["radius"],
                  peer_range=cfg["peer_range"], policy=policy,
                  personality_init=cfg["personality_init"], seed=cfg["seed"],
                  out_dir=str(out), metadata=PieceMetadata(key=cfg["key"], tempo_bpm=cfg["tempo"]),
                  sigma_source=cfg["sigma_source"], patience=cfg["patience"],
                  workers=cfg["workers"])
    if objective:
        kwargs["objective"] = objective
    config = RunConfig(**kwargs)
    policy_obj = None
    if transport is not None:
        from .policy import make_policy
        policy_obj = make_policy(policy, transport)
    result = run(config, policy_obj)
    if cfg["figures"] and result.scores:
        fig = out / "figures"
        score_history(result.iterations, result.scores, result.best_iteration,
                      fig / "score_history.png", title=f"{config.system} run")
        if result.traits is not None:
            trait_trajectories(result.traits, fig / "traits.png")
    summary = result.summary()
    summary["run_config"] = config.to_dict()
    if result.status != "ok":
        raise RuntimeFailure(f"run {result.status}", summary, out, inputs)
    return summary, out, inputs


def _analysis_out(cfg: dict) -> Path | None:
    return Path(cfg["out"]) if cfg["out"] else None


def cmd_musicology(cfg: dict) -> tuple[dict, Path | None, list[dict]]:
    from .musicology import analyze_piece
    from .plotting import rhythm_palette, tonal_curves

    out = _analysis_out(cfg)
    report, inputs = {}, []
    for path, piece in _load_pieces(cfg["inputs"]):
        inputs.append(describe_input(path))
        stem = _unique_stem(path, report)
        r = analyze_piece(piece, cfg["voice"])
        report[stem] = r
        if out:
            out.mkdir(parents=True, exist_ok=True)
            (out / f"{stem}.json").write_text(dumps(r) + "\n", encoding="utf-8")
        if out and cfg["figures"]:
            tonal_curves(r["tonal"]["stability"], r["tonal"]["tension"],
                         out / "figures" / f"{stem}_tonal.png")
            rhythm_palette(r["rhythm_histogram"], out / "figures" / f"{stem}_rhythm.png")
    if out:
        write_comparison(out / "comparison.csv", report)
    return report, out, inputs


COMPARISON_COLUMNS = ("expectation_violations", "mean_surprise", "surprise_density",
                      "violation_density", "unpredictability", "creative_risk")


def write_comparison(path: Path, report: dict) -> Path:
    _rows(path, ["piece", *COMPARISON_COLUMNS, "rhythm_diversity", "mean_stability",
                 "mean_tension"],
          ([name, *(r["creative"][c] for c in COMPARISON_COLUMNS), r["rhythm_diversity"],
            r["mean_stability"], r["mean_tension"]] for name, r in report.items()))
    return path


def cmd_graph(cfg: dict) -> tuple[dict, Path | None, list[dict]]:
    from . import plotting
    from .structure_graph import (
        build_ssm, degree_fit, frame_features, graph_metrics, js_novelty, knn_graph,
        longrange_metrics,
    )

    out = _analysis_out(cfg)
    report, inputs = {}, []
    for path, piece in _load_pieces(cfg["inputs"]):
        inputs.append(describe_input(path))
        stem = _unique_stem(path, report)
        frames = frame_features(piece, cfg["frame_len"])
        S = build_ssm(frames)
        G = knn_graph(S, cfg["k"])
        metrics = graph_metrics(G, cfg["n_null"], cfg["seed"])
        curve, peaks, density = js_novelty(frames, cfg["window"])
        try:
            fit = degree_fit(G)
        except ValueError as exc:
            fit = {"error": str(exc)}
        report[stem] = {
            "frames": len(frames.frames), "metrics": metrics.to_dict(),
            "longrange": longrange_metrics(G, metrics.communities), "degree_fit": fit,
            "novelty": {"curve": list(map(float, curve)), "peaks": list(map(int, peaks)),
                        "peak_density": density},
        }
        if out:
            write_graph_tables(out, stem, G, metrics.communities)
        if out and cfg["figures"]:
            plotting.matrix(S, out / "figures" / f"{stem}_ssm.png")
            plotting.novelty(curve, peaks, out / "figures" / f"{stem}_novelty.png")
    return report, out, inputs


def _rows(path: Path, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_graph_tables(out: Path, stem: str, G, parts) -> None:
    _rows(out / f"{stem}_edges.csv", ["source", "target", "weight"],
          sorted((u, v, repr(float(w))) if u < v else (v, u, repr(float(w)))
                 for u, v, w in G.edges(data="weight")))
    _rows(out / f"{stem}_communities.csv", ["node", "community"],
          sorted((v, ci) for ci, c in enumerate(parts) for v in c))


def write_multiscale_tables(out: Path, stem: str, r: dict) -> None:
    levels = r["levels"]
    cols = [k for k in levels[0] if not isinstance(levels[0][k], (list, dict))]
    _rows(out / f"{stem}_levels.csv", cols, ([lv[c] for c in cols] for lv in levels))
    _rows(out / f"{stem}_persistence.csv", ["transition", "jaccard"],
          enumerate(r["persistence"], start=1))
    (out / f"{stem}_sankey.json").write_text(dumps(r["sankey"]) + "\n", encoding="utf-8")
    sig = r["signatures"]
    spectra = {"spectral": sig["spectral"], "diffusion": sig["diffusion"]}
    (out / f"{stem}_spectra.json").write_text(dumps(spectra) + "\n", encoding="utf-8")


def cmd_multiscale(cfg: dict) -> tuple[dict, Path | None, list[dict]]:
    from . import plotting
    from .multiscale import multiscale_report
    from .structure_graph import graph_from_piece

    out = _analysis_out(cfg)
    report, inputs = {}, []
    for path, piece in _load_pieces(cfg["inputs"]):
        inputs.append(describe_input(path))
        stem = _unique_stem(path, report)
        G = graph_from_piece(piece, cfg["frame_len"], cfg["k"])
        r = multiscale_report(G, cfg["levels"], cfg["top_k"], n_null=cfg["n_null"],
                              seed=cfg["seed"])
        report[stem] = r
        if out:
            write_multiscale_tables(out, stem, r)
        if out and cfg["figures"]:
            th = [lv["threshold"] for lv in r["levels"]]
            plotting.persistence(th, r["persistence"], out / "figures" / f"{stem}_persistence.png")
            plotting.return_probability(r["signatures"]["diffusion"]["return_probability"],
                                        out / "figures" / f"{stem}_diffusion.png")
    return report, out, inputs


def cmd_equilibrium(cfg: dict) -> tuple[dict, Path | None, list[dict]]:
    from . import plotting
    from .equilibrium import analyze, load_traits_csv

    if not cfg["traits"]:
        raise UsageError("--traits is required")
    path = Path(cfg["traits"])
    if not path.is_file():
        raise UsageError(f"traits file not found: {path}")
    x, names = load_traits_csv(path)
    res = analyze(x, names)
    cal = res["calibration"]
    report = {
        "fit": res["fit"].to_dict(), "observed": res["observed"], "model": res["model"],
        "calibration": cal.to_dict(), "epsilon": res["epsilon"],
        "residuals": res["residuals"],
    }
    out = _analysis_out(cfg)
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "fits.json").write_text(dumps(report["fit"]) + "\n", encoding="utf-8")
        (out / "calibration.json").write_text(dumps(report["calibration"]) + "\n",
                                              encoding="utf-8")
        if res["residuals"] is not None:
            _rows(out / "residuals.csv", ["agent", *names],
                  ([i + 1, *map(repr, map(float, row))] for i, row in enumerate(res["residuals"])))
    if out and cfg["figures"]:
        plotting.equilibrium_overlay(res["observed"], res["model"], cal.lam, cal.delta,
                                     out / "figures" / "calibration.png")
        if res["residuals"] is not None:
            plotting.residual_heatmap(res["residuals"], out / "figures" / "residuals.png", names)
    return report, out, [describe_input(path)]


def cmd_particles(cfg: dict) -> tuple[dict, Path, list[dict]]:
    from .particles import run_experiment

    out = Path(cfg["out"])
    t0 = time.perf_counter()
    try:
        res = run_experiment(cfg["rule"], cfg["steps"], cfg["seed"], cfg["n"], cfg["rho"],
                             stride=cfg["stride"], dr=cfg["dr"])
    except FloatingPointError as exc:
        raise RuntimeFailure(str(exc), {}, out, []) from exc
    out.mkdir(parents=True, exist_ok=True)
    with (out / "config.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", res.order_name])
        for (x, y), v in zip(res.system.pos, res.order):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])
    with (out / "gr.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "g"])
        w.writerows([repr(float(r)), repr(float(g))] for r, g in zip(res.r, res.g))
    with (out / "series.csv").open("w", newline="") as fh:
        cols = list(res.series[0])
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(res.series)
    (out / "params.json").write_text(dumps(res.params) + "\n", encoding="utf-8")
    summary = {"rule": res.rule, "steps": res.params["steps"],
               "final": res.series[-1], "overlap_events": res.overlaps,
               "neighbor_rebuilds": res.rebuilds,
               "seconds": round(time.perf_counter() - t0, 3)}
    return summary, out, []


COMMANDS = {"compose": cmd_compose, "musicology": cmd_musicology, "graph": cmd_graph,
            "multiscale": cmd_multiscale, "equilibrium": cmd_equilibrium,
            "particles": cmd_particles}


def main(argv: Sequence[str] | None = None, transport=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    section = ns.analysis if ns.command == "analyze" else ns.command
    flags = {k: v for k, v in vars(ns).items()
             if k not in ("command", "analysis", "verbose", "config")}
    started = _now()
    out = None
    try:
        file_data = read_config_file(ns.config) if getattr(ns, "config", None) else None
        cfg = resolve(section, flags, file_data)
        fn = COMMANDS[section]
        body, out, inputs = fn(cfg, transport) if section == "compose" else fn(cfg)
        status, code = "ok", EXIT_OK
    except RuntimeFailure as exc:
        msg, body, out, inputs = exc.args
        print(f"swarmcomp: {msg}", file=sys.stderr)
        status, code = "failed", EXIT_RUNTIME
    except (UsageError, ScoreError, ValueError, KeyError, TypeError, OSError,
            tomllib.TOMLDecodeError) as exc:
        print(f"swarmcomp: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except LLMError as exc:
        print(f"swarmcomp: policy failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    seeds = {k: cfg[k] for k in ("seed",) if k in cfg}
    manifest = {
        "schema_version": SCHEMA_VERSION, "version": __version__,
        "command": ["swarmcomp", *argv], "section": section, "config": {section: cfg},
        "seeds": seeds, "started": started, "finished": _now(), "status": status,
        "inputs": inputs, "outputs": _outputs(out) if out and out.exists() else [],
    }
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if section in ("musicology", "graph", "multiscale", "equilibrium"):
            (out / "report.json").write_text(dumps(body) + "\n", encoding="utf-8")
            manifest["outputs"] = _outputs(out)
        write_manifest(out, manifest)
        print(dumps({"status": status, "out": str(out), "summary": body
                     if section in ("compose", "particles") else None}))
    else:
        print(dumps({"report": body, "manifest": manifest}))
    return code


if __name__ == "__main__":
    sys.exit(main())
