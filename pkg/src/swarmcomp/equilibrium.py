"""Best-response analysis of agent trait trajectories on a line of agents.

Trajectories are arrays x[i, k, t] (agent, trait, snapshot) with NaN for
missing entries. Each trait is fitted with the linear response

    x[i, k, t+1] = alpha_k x[i, k, t] + beta_k mean(x[N(i), k, t]) + gamma_k

where N(i) are the path neighbours of agent i.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .policy.state import TRAITS


class NoObservedPairs(ValueError):
    pass


def path_adjacency(n: int) -> np.ndarray:
    A = np.zeros((n, n))
    idx = np.arange(n - 1)
    A[idx, idx + 1] = A[idx + 1, idx] = 1.0
    return A


def path_transition(n: int) -> np.ndarray:
    """Row-normalized path adjacency P = D^-1 A (a lone agent maps to itself)."""
    if n == 1:
        return np.ones((1, 1))
    A = path_adjacency(n)
    return A / A.sum(axis=1, keepdims=True)


def mean_step_change(x: np.ndarray) -> np.ndarray:
    """Mean |x(t+1) - x(t)| over entries observed at both steps; NaN where none are."""
    x = np.asarray(x, float)
    if x.shape[-1] < 2:
        raise ValueError("need at least two snapshots")
    d = np.abs(x[..., 1:] - x[..., :-1])
    ok = np.isfinite(d)
    counts = ok.reshape(-1, d.shape[-1]).sum(axis=0)
    sums = np.where(ok, d, 0.0).reshape(-1, d.shape[-1]).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


@dataclass
class TraitFit:
    trait: str
    alpha: float
    beta: float
    gamma: float
    r2: float
    n: int
    rank_deficient: bool
    M: np.ndarray
    c: np.ndarray
    spectral_radius: float

    def to_dict(self) -> dict:
        return {"trait": self.trait, "alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
                "r2": self.r2, "n": self.n, "rank_deficient": self.rank_deficient,
                "spectral_radius": self.spectral_radius}


@dataclass
class BestResponseFit:
    n_agents: int
    traits: list[TraitFit] = field(default_factory=list)

    def __getitem__(self, key: int | str) -> TraitFit:
        if isinstance(key, str):
            return next(f for f in self.traits if f.trait == key)
        return self.traits[key]

    def to_dict(self) -> dict:
        return {"n_agents": self.n_agents, "traits": [f.to_dict() for f in self.traits]}


def regression_rows(xk: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Design rows [x_i, mean neighbour x, 1] and targets for one trait (N, T+1)."""
    n, snaps = xk.shape
    P = path_transition(n)
    X, y = [], []
    for t in range(snaps - 1):
        cur, nxt = xk[:, t], xk[:, t + 1]
        for i in range(n):
            nb = P[i] > 0
            if n == 1:
                nbar = cur[i]
            else:
                nbar = float(P[i, nb] @ cur[nb])
            row = (cur[i], nbar, nxt[i])
            if all(np.isfinite(row)):
                X.append([cur[i], nbar, 1.0])
                y.append(nxt[i])
    return np.array(X).reshape(-1, 3), np.array(y)


def linear_map(alpha: float, beta: float, gamma: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    return alpha * np.eye(n) + beta * path_transition(n), np.full(n, gamma)


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def fit_best_response(x: np.ndarray, trait_names: Sequence[str] = TRAITS) -> BestResponseFit:
    x = np.asarray(x, float)
    n, K, _ = x.shape
    out = BestResponseFit(n)
    for k in range(K):
        X, y = regression_rows(x[:, k, :])
        if len(y) < 3:
            raise NoObservedPairs(f"trait {k}: only {len(y)} usable transitions")
        coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
        pred = X @ coef
        ss_res = float(np.sum((y - pred) ** 2))
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
        a, b, g = (float(v) for v in coef)
        M, c = linear_map(a, b, g, n)
        name = trait_names[k] if k < len(trait_names) else f"trait_{k}"
        out.traits.append(TraitFit(name, a, b, g, r2, len(y), bool(rank < 3), M, c,
                                   spectral_radius(M)))
    return out


def first_profile(x: np.ndarray) -> np.ndarray:
    """First snapshot, with any missing entry filled from the earliest later observation."""
    x = np.asarray(x, float)
    x0 = x[:, :, 0].copy()
    for t in range(1, x.shape[2]):
        miss = ~np.isfinite(x0)
        if not miss.any():
            break
        x0[miss] = x[:, :, t][miss]
    return x0


def iterate_model(fit: BestResponseFit, x0: np.ndarray, steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Run x <- M_k x + c_k from x0 (N, K); returns (trajectory, mean step change)."""
    x0 = np.asarray(x0, float)
    n, K = x0.shape
    traj = np.empty((n, K, steps + 1))
    traj[:, :, 0] = x0
    for t in range(steps):
        for k, f in enumerate(fit.traits):
            traj[:, k, t + 1] = f.M @ traj[:, k, t] + f.c
    delta = np.abs(np.diff(traj, axis=2)).sum(axis=(0, 1)) / (n * K)
    return traj, delta


def fixed_point(fit: TraitFit) -> np.ndarray:
    n = len(fit.c)
    return np.linalg.solve(np.eye(n) - fit.M, fit.c)


def decay_envelope(fit: BestResponseFit, x0: np.ndarray, steps: int) -> np.ndarray:
    """Upper bound C rho^t on the model's mean step change.

    With M_k = V diag(lambda) V^-1, the step e_t = M^t e_0 obeys
    |e_t|_1 <= sqrt(N) kappa(V) rho^t |e_0|_2.
    """
    x0 = np.asarray(x0, float)
    n, K = x0.shape
    bound = np.zeros(steps)
    for k, f in enumerate(fit.traits):
        e0 = f.M @ x0[:, k] + f.c - x0[:, k]
        _, V = np.linalg.eig(f.M)
        kappa = np.linalg.cond(V)
        bound += np.sqrt(n) * kappa * np.linalg.norm(e0) * f.spectral_radius ** np.arange(steps)
    return bound / (n * K)


@dataclass
class Calibration:
    lam: float
    delta: float
    n: int
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "delta": self.delta, "n": self.n, "flags": self.flags}


def calibrate(observed: Sequence[float], model: Sequence[float]) -> Calibration:
    """Least squares observed ~ delta + lambda * model over points where both exist."""
    o, m = np.asarray(observed, float), np.asarray(model, float)
    size = min(len(o), len(m))
    o, m = o[:size], m[:size]
    ok = np.isfinite(o) & np.isfinite(m)
    o, m = o[ok], m[ok]
    if len(o) < 2:
        raise ValueError("need at least two overlapping points")
    mc = m - m.mean()
    var = float(mc @ mc)
    if var <= 1e-24 * max(1.0, float(m @ m)):
        return Calibration(0.0, float(o.mean()), len(o), ["degenerate_variance"])
    lam = float(mc @ (o - o.mean()) / var)
    return Calibration(lam, float(o.mean() - lam * m.mean()), len(o))


def fixed_point_residuals(fit: BestResponseFit, x_t: np.ndarray) -> tuple[np.ndarray, float]:
    x_t = np.asarray(x_t, float)
    if not np.all(np.isfinite(x_t)):
        raise ValueError("terminal snapshot has missing entries")
    res = np.empty_like(x_t)
    for k, f in enumerate(fit.traits):
        res[:, k] = np.abs(f.M @ x_t[:, k] + f.c - x_t[:, k])
    return res, float(res.max())


# --------------------------------------------------------------------------
# synthetic data and I/O

def simulate(alpha: float, beta: float, gamma: float, n: int, K: int, snaps: int,
             seed: int = 0, noise: float = 0.0,
             coefs: Sequence[tuple[float, float, float]] | None = None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    x = np.empty((n, K, snaps))
    x[:, :, 0] = rng.uniform(0.1, 0.9, (n, K))
    coefs = coefs or [(alpha, beta, gamma)] * K
    for k, (a, b, g) in enumerate(coefs):
        M, c = linear_map(a, b, g, n)
        for t in range(snaps - 1):
            x[:, k, t + 1] = M @ x[:, k, t] + c + noise * rng.standard_normal(n)
    return x


def load_traits_csv(path: str | Path) -> tuple[np.ndarray, list[str]]:
    """Read long-format rows (iteration, agent, trait, value) into x[agent, trait, t]."""
    rows = []
    with Path(path).open(newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append((int(r["iteration"]), int(r["agent"]), r["trait"], float(r["value"])))
    if not rows:
        raise ValueError("no trait rows")
    iters = sorted({r[0] for r in rows})
    agents = sorted({r[1] for r in rows})
    present = {r[2] for r in rows}
    names = [t for t in TRAITS if t in present] + sorted(present - set(TRAITS))
    x = np.full((len(agents), len(names), len(iters)), np.nan)
    ai = {a: i for i, a in enumerate(agents)}
    ti = {t: i for i, t in enumerate(iters)}
    ki = {k: i for i, k in enumerate(names)}
    for t, a, k, v in rows:
        x[ai[a], ki[k], ti[t]] = v
    return x, names


def analyze(x: np.ndarray, trait_names: Sequence[str] = TRAITS) -> dict:
    fit = fit_best_response(x, trait_names)
    obs = mean_step_change(x)
    _, model = iterate_model(fit, first_profile(x), x.shape[2] - 1)
    cal = calibrate(obs, model)
    terminal = x[:, :, -1]
    residuals, eps = (fixed_point_residuals(fit, terminal) if np.all(np.isfinite(terminal))
                      else (None, None))
    return {"fit": fit, "observed": obs, "model": model, "calibration": cal,
            "residuals": residuals, "epsilon": eps}
