"""Two-dimensional periodic particle box with four local interaction rules.

Three conservative pair potentials (Lennard-Jones, Morse, SALR) run under
overdamped Langevin dynamics with an annealed temperature; the Vicsek rule
aligns headings with neighbours and self-propels. Observables: g(r), the
hexatic order |psi_6| and a local density proxy.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

log = logging.getLogger(__name__)

FORCE_CAP = 1e4
OVERLAP_R = 1e-6
REBUILD_EVERY = 10


# --------------------------------------------------------------------------
# interaction rules

@dataclass(frozen=True)
class LennardJones:
    sigma: float = 1.0
    epsilon: float = 1.0
    rc: float = 2.5
    name: str = "lj"

    def potential(self, r):
        s6 = (self.sigma / r) ** 6
        return 4 * self.epsilon * (s6 * s6 - s6)

    def force(self, r):
        """-dU/dr; positive means repulsive."""
        s6 = (self.sigma / r) ** 6
        return 24 * self.epsilon * (2 * s6 * s6 - s6) / r


@dataclass(frozen=True)
class Morse:
    De: float = 1.0
    alpha: float = 3.0
    re: float = 1.1
    rc: float = 3.0
    name: str = "morse"

    def potential(self, r):
        e = np.exp(-self.alpha * (r - self.re))
        return self.De * (1 - e) ** 2 - self.De

    def force(self, r):
        e = np.exp(-self.alpha * (r - self.re))
        return -2 * self.De * self.alpha * e * (1 - e)


@dataclass(frozen=True)
class SALR:
    A: float = 1.0
    sigma_a: float = 0.8
    B: float = 0.30
    sigma_r: float = 3.0
    rc: float = 4.0
    name: str = "salr"

    def potential(self, r):
        return (-self.A * np.exp(-(r / self.sigma_a) ** 2)
                + self.B * np.exp(-(r / self.sigma_r) ** 2))

    def force(self, r):
        return (-2 * self.A * r / self.sigma_a ** 2 * np.exp(-(r / self.sigma_a) ** 2)
                + 2 * self.B * r / self.sigma_r ** 2 * np.exp(-(r / self.sigma_r) ** 2))


@dataclass(frozen=True)
class Vicsek:
    Rv: float = 1.0
    eta: float = 0.25
    v0: float = 0.03
    name: str = "vicsek"

    @property
    def rc(self) -> float:
        return self.Rv


RULES = {"lj": LennardJones, "morse": Morse, "salr": SALR, "vicsek": Vicsek}


def make_rule(name: str):
    try:
        return RULES[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown rule {name!r}; choose from {sorted(RULES)}") from None


@dataclass(frozen=True)
class AnnealSchedule:
    T0: float = 0.4
    T_min: float = 0.02
    p: float = 1.5
    steps: int = 3000

    def __post_init__(self):
        if not self.T0 >= self.T_min > 0:
            raise ValueError("need T0 >= T_min > 0")
        if self.steps < 1:
            raise ValueError("need at least one step")


def temperature(t: int, schedule: AnnealSchedule = AnnealSchedule()) -> float:
    if not 0 <= t < schedule.steps:
        raise ValueError(f"t={t} outside [0, {schedule.steps})")
    frac = 1.0 - t / (schedule.steps - 1) if schedule.steps > 1 else 0.0
    return schedule.T_min + (schedule.T0 - schedule.T_min) * frac ** schedule.p


# --------------------------------------------------------------------------
# system and neighbour search

@dataclass
class ParticleSystem:
    pos: np.ndarray
    box: np.ndarray
    theta: np.ndarray | None = None
    seed: int | None = None

    @property
    def n(self) -> int:
        return len(self.pos)

    @property
    def L(self) -> float:
        return float(self.box[0])

    def wrap(self) -> None:
        self.pos %= self.box
        # float modulo can return exactly box for tiny negative inputs
        self.pos[self.pos >= self.box] = 0.0


def init_system(n: int = 1024, rho: float = 0.8, seed: int = 42,
                headings: bool = False) -> ParticleSystem:
    if n < 2:
        raise ValueError("need at least two particles")
    L = math.sqrt(n / rho)
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0.0, L, (n, 2))
    theta = rng.uniform(-math.pi, math.pi, n) if headings else None
    sys = ParticleSystem(pos, np.array([L, L]), theta, seed)
    sys.wrap()
    return sys


def minimum_image(d: np.ndarray, box: np.ndarray) -> np.ndarray:
    return d - box * np.round(d / box)


def brute_pairs(pos: np.ndarray, box: np.ndarray, rcut: float):
    """All pairs i < j within rcut, in lexicographic order."""
    n = len(pos)
    i, j = np.triu_indices(n, 1)
    d = minimum_image(pos[j] - pos[i], box)
    r = np.hypot(d[:, 0], d[:, 1])
    keep = r < rcut
    return i[keep], j[keep]


def cell_pairs(pos: np.ndarray, box: np.ndarray, rcut: float):
    """Cell-linked candidate search; same pairs and order as brute_pairs."""
    nc = np.floor(box / rcut).astype(int)
    if np.any(nc < 3):
        return brute_pairs(pos, box, rcut)
    cxy = np.floor(pos / box * nc).astype(int) % nc
    cid = cxy[:, 0] * nc[1] + cxy[:, 1]
    order = np.argsort(cid, kind="stable")
    counts = np.bincount(cid, minlength=nc[0] * nc[1])
    width = int(counts.max())
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    members = np.full((len(counts), width), -1)
    slot = np.arange(len(pos)) - starts[cid[order]]
    members[cid[order], slot] = order
    cx, cy = np.divmod(np.arange(len(counts)), nc[1])
    ii, jj = [], []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            nb = ((cx + dx) % nc[0]) * nc[1] + (cy + dy) % nc[1]
            a = members[:, :, None]
            b = members[nb][:, None, :]
            ok = (a >= 0) & (b >= 0) & (a < b)
            ai, bi = np.broadcast_arrays(a, b)
            ii.append(ai[ok])
            jj.append(bi[ok])
    i = np.concatenate(ii)
    j = np.concatenate(jj)
    d = minimum_image(pos[j] - pos[i], box)
    keep = np.hypot(d[:, 0], d[:, 1]) < rcut
    i, j = i[keep], j[keep]
    srt = np.lexsort((j, i))
    return i[srt], j[srt]


@dataclass
class NeighborList:
    rcut: float
    skin: float
    use_cells: bool = True
    i: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    j: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    ref: np.ndarray | None = None
    age: int = 0
    builds: int = 0

    def build(self, sys: ParticleSystem) -> None:
        finder = cell_pairs if self.use_cells else brute_pairs
        self.i, self.j = finder(sys.pos, sys.box, self.rcut + self.skin)
        self.ref = sys.pos.copy()
        self.age = 0
        self.builds += 1

    def ensure(self, sys: ParticleSystem, every: int = REBUILD_EVERY) -> None:
        """Rebuild on the fixed cadence, or early if anyone moved more than half the skin."""
        if self.ref is None or self.age >= every:
            self.build(sys)
            return
        moved = minimum_image(sys.pos - self.ref, sys.box)
        if np.max(np.einsum("ij,ij->i", moved, moved)) > (self.skin / 2) ** 2:
            self.build(sys)


# --------------------------------------------------------------------------
# forces and dynamics

@dataclass
class ForceResult:
    forces: np.ndarray
    energy: float
    overlaps: int
    f_pair: np.ndarray
    i: np.ndarray
    j: np.ndarray


def pair_forces(pos: np.ndarray, box: np.ndarray, rule, i: np.ndarray, j: np.ndarray) -> ForceResult:
    d = minimum_image(pos[i] - pos[j], box)       # points from j to i
    r = np.hypot(d[:, 0], d[:, 1])
    inside = r < rule.rc
    i, j, d, r = i[inside], j[inside], d[inside], r[inside]
    close = r < OVERLAP_R
    n_close = int(close.sum())
    if n_close:
        log.debug("%d overlapping pair(s) below r=%g", n_close, OVERLAP_R)
        d = d.copy()
        d[close] = (OVERLAP_R, 0.0)  # fixed +x direction once divided by r
        r = np.where(close, OVERLAP_R, r)
    mag = np.clip(rule.force(r), -FORCE_CAP, FORCE_CAP)
    if n_close:
        mag = np.where(close, FORCE_CAP, mag)
    unit = d / r[:, None]
    fp = mag[:, None] * unit
    n = len(pos)
    F = np.empty((n, 2))
    for ax in range(2):
        F[:, ax] = (np.bincount(i, weights=fp[:, ax], minlength=n)
                    - np.bincount(j, weights=fp[:, ax], minlength=n))
    energy = float(np.sum(rule.potential(r)))
    return ForceResult(F, energy, n_close, fp, i, j)


def compute_forces(sys: ParticleSystem, rule, nlist: NeighborList | None = None,
                   use_cells: bool = True) -> ForceResult:
    if nlist is None:
        finder = cell_pairs if use_cells else brute_pairs
        i, j = finder(sys.pos, sys.box, rule.rc)
    else:
        i, j = nlist.i, nlist.j
    return pair_forces(sys.pos, sys.box, rule, i, j)


def step_langevin(sys: ParticleSystem, rule, T: float, dt: float = 1e-3, mu: float = 1.0,
                  rng: np.random.Generator | None = None,
                  nlist: NeighborList | None = None) -> ForceResult:
    """One Euler-Maruyama step of dr = mu F dt + sqrt(2 T) dW (in place)."""
    if isinstance(rule, Vicsek):
        raise TypeError("use step_vicsek for the Vicsek rule")
    if nlist is not None:
        nlist.ensure(sys)
    res = compute_forces(sys, rule, nlist)
    sys.pos += mu * res.forces * dt
    if T > 0:
        rng = rng or np.random.default_rng()
        sys.pos += math.sqrt(2.0 * T * dt) * rng.standard_normal(sys.pos.shape)
    sys.wrap()
    if nlist is not None:
        nlist.age += 1
    return res


def step_vicsek(sys: ParticleSystem, rule: Vicsek, dt: float = 1e-3,
                rng: np.random.Generator | None = None,
                nlist: NeighborList | None = None) -> None:
    if sys.theta is None:
        raise ValueError("system has no headings")
    if nlist is not None:
        nlist.ensure(sys)
        i, j = nlist.i, nlist.j
    else:
        i, j = cell_pairs(sys.pos, sys.box, rule.Rv)
    d = minimum_image(sys.pos[j] - sys.pos[i], sys.box)
    near = np.hypot(d[:, 0], d[:, 1]) < rule.Rv
    i, j = i[near], j[near]
    c, s = np.cos(sys.theta), np.sin(sys.theta)
    n = sys.n
    # self included
    sc = c + np.bincount(i, weights=c[j], minlength=n) + np.bincount(j, weights=c[i], minlength=n)
    ss = s + np.bincount(i, weights=s[j], minlength=n) + np.bincount(j, weights=s[i], minlength=n)
    noise = 0.0
    if rule.eta > 0:
        rng = rng or np.random.default_rng()
        noise = rng.uniform(-rule.eta / 2, rule.eta / 2, n)
    sys.theta = np.angle(np.exp(1j * (np.arctan2(ss, sc) + noise)))
    sys.pos += rule.v0 * np.column_stack([np.cos(sys.theta), np.sin(sys.theta)]) * dt
    sys.wrap()
    if nlist is not None:
        nlist.age += 1


# --------------------------------------------------------------------------
# observables

def radial_distribution(sys: ParticleSystem, dr: float = 0.05,
                        r_max: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """g(r) = H / (N 2 pi r dr rho) with H counting ordered pairs, r at bin centres."""
    box = sys.box
    r_max = float(min(box) / 2) if r_max is None else r_max
    n = sys.n
    rho = n / float(np.prod(box))
    edges = np.arange(0.0, r_max + dr / 2, dr)
    hist = np.zeros(len(edges) - 1)
    block = max(1, 2_000_000 // n)
    for a in range(0, n, block):
        d = minimum_image(sys.pos[None, :, :] - sys.pos[a:a + block, None, :], box)
        r = np.hypot(d[..., 0], d[..., 1])
        idx = np.arange(a, min(n, a + block))
        r[np.arange(len(idx)), idx] = np.inf
        hist += np.histogram(r[np.isfinite(r)], bins=edges)[0]
    centres = (edges[:-1] + edges[1:]) / 2
    return centres, hist / (n * 2 * math.pi * centres * dr * rho)


def _neighbor_vectors(sys: ParticleSystem, radius: float):
    i, j = cell_pairs(sys.pos, sys.box, radius)
    d = minimum_image(sys.pos[j] - sys.pos[i], sys.box)
    return i, j, d


def hexatic_order(sys: ParticleSystem, r_nb: float = 1.5) -> tuple[np.ndarray, np.ndarray]:
    """|psi_6| per particle and a mask of particles that had no neighbours.

    Bond angles are measured from the +x axis.
    """
    i, j, d = _neighbor_vectors(sys, r_nb)
    z = np.exp(6j * np.arctan2(d[:, 1], d[:, 0]))
    n = sys.n
    # the reverse bond has angle + pi, and 6 pi leaves the phase unchanged
    re = np.bincount(i, weights=z.real, minlength=n) + np.bincount(j, weights=z.real, minlength=n)
    im = np.bincount(i, weights=z.imag, minlength=n) + np.bincount(j, weights=z.imag, minlength=n)
    cnt = np.bincount(i, minlength=n) + np.bincount(j, minlength=n)
    lonely = cnt == 0
    psi = np.where(lonely, 0.0, np.hypot(re, im) / np.maximum(cnt, 1))
    return np.clip(psi, 0.0, 1.0), lonely


def local_density(sys: ParticleSystem, r: float = 1.25) -> np.ndarray:
    i, j, _ = _neighbor_vectors(sys, r)
    cnt = (np.bincount(i, minlength=sys.n) + np.bincount(j, minlength=sys.n)).astype(float)
    top = cnt.max()
    return cnt / top if top > 0 else np.zeros(sys.n)


def polar_order(theta: np.ndarray) -> float:
    return float(np.abs(np.mean(np.exp(1j * theta))))


# --------------------------------------------------------------------------
# experiment protocol

@dataclass
class ExperimentResult:
    rule: str
    params: dict
    system: ParticleSystem
    series: list[dict]
    r: np.ndarray
    g: np.ndarray
    order: np.ndarray
    order_name: str
    overlaps: int = 0
    rebuilds: int = 0

    def mean_psi6(self) -> float:
        return float(np.mean(hexatic_order(self.system)[0]))


def run_experiment(rule_name: str = "lj", steps: int | None = None, seed: int = 42,
                   n: int = 1024, rho: float = 0.8, dt: float = 1e-3, mu: float = 1.0,
                   stride: int = 50, dr: float = 0.05, skin: float = 0.4,
                   schedule: AnnealSchedule | None = None) -> ExperimentResult:
    rule = make_rule(rule_name)
    vicsek = isinstance(rule, Vicsek)
    steps = steps if steps is not None else (2000 if vicsek else 3000)
    if schedule is None:
        schedule = AnnealSchedule(steps=steps)
    elif schedule.steps != steps:
        raise ValueError("schedule steps and run steps differ")
    sys = init_system(n, rho, seed, headings=vicsek)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=[1]))
    nlist = NeighborList(rule.rc, skin)
    series: list[dict] = []
    overlaps = 0
    for t in range(steps):
        if vicsek:
            step_vicsek(sys, rule, dt, rng, nlist)
            row = {"step": t, "polar_order": polar_order(sys.theta)}
        else:
            T = temperature(t, schedule)
            res = step_langevin(sys, rule, T, dt, mu, rng, nlist)
            overlaps += res.overlaps
            if not np.isfinite(res.energy) or not np.all(np.isfinite(sys.pos)):
                raise FloatingPointError(f"non-finite state at step {t}")
            row = {"step": t, "temperature": T, "energy_per_particle": res.energy / n}
        if t % stride == 0 or t == steps - 1:
            psi, _ = hexatic_order(sys)
            row["mean_psi6"] = float(psi.mean())
            series.append(row)
    r, g = radial_distribution(sys, dr)
    if vicsek:
        order, name = (sys.theta % (2 * math.pi)) / (2 * math.pi), "heading"
    elif isinstance(rule, SALR):
        order, name = local_density(sys), "local_density"
    else:
        order, name = hexatic_order(sys)[0], "psi6"
    params = {"rule": asdict(rule), "steps": steps, "seed": seed, "n": n, "rho": rho,
              "L": sys.L, "dt": dt, "mu": mu, "stride": stride, "dr": dr, "skin": skin,
              "rebuild_every": REBUILD_EVERY, "force_cap": FORCE_CAP,
              "schedule": None if vicsek else asdict(schedule)}
    return ExperimentResult(rule.name, params, sys, series, r, g, order, name, overlaps,
                            nlist.builds)
