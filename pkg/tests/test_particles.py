import math

import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st

from swarmcomp.particles import (
    FORCE_CAP, AnnealSchedule, LennardJones, Morse, NeighborList, ParticleSystem, SALR, Vicsek,
    brute_pairs, cell_pairs, compute_forces, hexatic_order, init_system, local_density,
    make_rule, minimum_image, polar_order, radial_distribution, run_experiment, step_langevin,
    step_vicsek, temperature,
)

POTENTIALS = [LennardJones(), Morse(), SALR()]


def triangular_lattice(nx_=12, ny=12, a=1.0):
    pts = [((i + 0.5 * (j % 2)) * a, j * a * math.sqrt(3) / 2) for j in range(ny) for i in range(nx_)]
    return ParticleSystem(np.array(pts), np.array([nx_ * a, ny * a * math.sqrt(3) / 2]))


def square_lattice(n=10, a=1.0):
    g = np.arange(n) * a
    pts = np.array([(x, y) for y in g for x in g], float)
    return ParticleSystem(pts, np.array([n * a, n * a]))


# rules

@pytest.mark.parametrize("rule", POTENTIALS, ids=lambda r: r.name)
def test_force_is_negative_gradient(rule):
    rng = np.random.default_rng(0)
    r = rng.uniform(0.8, rule.rc, 100)
    h = 1e-6 * r
    fd = -(rule.potential(r + h) - rule.potential(r - h)) / (2 * h)
    assert np.all(np.abs(rule.force(r) - fd) <= 1e-4 * np.maximum(np.abs(fd), 1e-8) + 1e-9)


def test_minima_have_no_force():
    assert abs(LennardJones().force(2 ** (1 / 6))) < 1e-12
    assert abs(Morse().force(Morse().re)) < 1e-12
    two = ParticleSystem(np.array([[1.0, 1.0], [1.0 + 2 ** (1 / 6), 1.0]]), np.array([10.0, 10.0]))
    assert np.abs(compute_forces(two, LennardJones()).forces).max() < 1e-12


def test_unknown_rule():
    with pytest.raises(ValueError):
        make_rule("coulomb")


def jittered(n_side=5, spacing=1.15, seed=0):
    rng = np.random.default_rng(seed)
    g = (np.arange(n_side) + 0.5) * spacing
    pos = np.array([(x, y) for y in g for x in g]) + rng.uniform(-0.08, 0.08, (n_side ** 2, 2))
    return ParticleSystem(pos, np.array([n_side * spacing] * 2))


@pytest.mark.parametrize("rule", POTENTIALS, ids=lambda r: r.name)
def test_vector_forces_match_energy_gradient(rule):
    sys = jittered(seed=1)
    res = compute_forces(sys, rule)
    assert np.abs(res.forces).max() < FORCE_CAP
    h = 1e-6
    for p in (0, 7, 18):
        for ax in range(2):
            e = []
            for s in (h, -h):
                moved = ParticleSystem(sys.pos.copy(), sys.box)
                moved.pos[p, ax] += s
                e.append(compute_forces(moved, rule).energy)
            fd = -(e[0] - e[1]) / (2 * h)
            assert res.forces[p, ax] == pytest.approx(fd, rel=1e-5, abs=1e-6)
    assert np.abs(res.forces.sum(axis=0)).max() < 1e-9


def test_force_cap_and_overlap():
    sys = ParticleSystem(np.array([[1.0, 1.0], [1.0, 1.0], [1.3, 1.0]]), np.array([10.0, 10.0]))
    res = compute_forces(sys, LennardJones())
    assert res.overlaps == 1
    assert np.all(np.isfinite(res.forces))
    assert np.abs(res.f_pair).max() <= FORCE_CAP


# schedule and init

def test_schedule():
    s = AnnealSchedule()
    T = [temperature(t, s) for t in range(s.steps)]
    assert T[0] == pytest.approx(0.4) and T[-1] == pytest.approx(0.02)
    assert all(a >= b for a, b in zip(T, T[1:]))
    with pytest.raises(ValueError):
        temperature(s.steps, s)


def test_init():
    a, b = init_system(), init_system()
    assert a.L == pytest.approx(math.sqrt(1280))
    assert np.array_equal(a.pos, b.pos)
    assert np.all((a.pos >= 0) & (a.pos < a.L))
    assert not np.array_equal(a.pos, init_system(seed=1).pos)


# neighbour search

@given(st.integers(2, 300), st.floats(0.5, 3.0), st.floats(0.3, 2.0), st.integers(0, 10_000))
def test_cells_equal_brute_force(n, side, rcut, seed):
    rng = np.random.default_rng(seed)
    box = np.array([side * 4, side * 3])
    pos = rng.uniform(0, 1, (n, 2)) * box
    bi, bj = brute_pairs(pos, box, rcut)
    ci, cj = cell_pairs(pos, box, rcut)
    assert np.array_equal(bi, ci) and np.array_equal(bj, cj)


def test_neighbor_list_rebuilds_on_motion():
    sys = init_system(64, 0.5, seed=3)
    nl = NeighborList(2.5, 0.4)
    nl.ensure(sys)
    assert nl.builds == 1
    nl.age = 1
    nl.ensure(sys)
    assert nl.builds == 1
    sys.pos[5] += 0.25
    sys.wrap()
    nl.ensure(sys)
    assert nl.builds == 2
    nl.age = 10
    nl.ensure(sys)
    assert nl.builds == 3


def test_neighbor_list_forces_match_direct():
    sys = init_system(200, 0.6, seed=4)
    rule = Morse()
    nl = NeighborList(rule.rc, 0.4)
    nl.build(sys)
    sys.pos += np.random.default_rng(5).uniform(-0.15, 0.15, sys.pos.shape)
    sys.wrap()
    a = compute_forces(sys, rule, nl).forces
    b = compute_forces(sys, rule, use_cells=False).forces
    assert np.allclose(a, b, atol=1e-9)


# dynamics

def test_zero_temperature_single_particle():
    sys = ParticleSystem(np.array([[2.0, 3.0]]), np.array([10.0, 10.0]))
    for _ in range(20):
        step_langevin(sys, LennardJones(), 0.0, rng=np.random.default_rng(0))
    assert sys.pos.tolist() == [[2.0, 3.0]]


def test_langevin_reproducible():
    def run(seed):
        sys = init_system(100, 0.5, seed=1)
        rng = np.random.default_rng(seed)
        for _ in range(30):
            step_langevin(sys, Morse(), 0.2, rng=rng)
        return sys.pos
    assert np.array_equal(run(7), run(7))
    assert not np.array_equal(run(7), run(8))


def test_aligned_flock_stays_aligned():
    sys = init_system(80, 0.8, seed=2, headings=True)
    sys.theta[:] = 0.7
    for _ in range(20):
        step_vicsek(sys, Vicsek(eta=0.0))
    assert np.allclose(sys.theta, 0.7, atol=1e-12)


def test_isolated_particle_keeps_heading():
    sys = ParticleSystem(np.array([[1.0, 1.0], [6.0, 6.0]]), np.array([12.0, 12.0]),
                         theta=np.array([0.3, -2.0]))
    step_vicsek(sys, Vicsek(eta=0.0), dt=1.0)
    assert sys.theta == pytest.approx([0.3, -2.0])
    assert sys.pos[0] == pytest.approx([1 + 0.03 * math.cos(0.3), 1 + 0.03 * math.sin(0.3)])


def test_polar_order_grows_at_low_noise():
    for seed in range(5):
        sys = init_system(300, 2.0, seed=seed, headings=True)
        start = polar_order(sys.theta)
        rng = np.random.default_rng(seed)
        for _ in range(200):
            step_vicsek(sys, Vicsek(eta=0.1, v0=0.5), dt=0.1, rng=rng)
        assert polar_order(sys.theta) > max(start, 0.3)


# observables

def test_uniform_points_have_flat_gr():
    gs = []
    for seed in range(4):
        r, g = radial_distribution(init_system(4096, 0.8, seed=seed), dr=0.25)
        gs.append(g)
    g = np.mean(gs, axis=0)
    L = math.sqrt(4096 / 0.8)
    mid = (r >= 2) & (r <= L / 4)
    assert np.all(np.abs(g[mid] - 1) < 0.05)


def test_square_lattice_gr_shells():
    sys = square_lattice(12)
    r, g = radial_distribution(sys, dr=0.02, r_max=2.9)
    occupied = r[g > 0]
    shells = sorted({math.hypot(a, b) for a in range(4) for b in range(4) if 0 < math.hypot(a, b) < 2.9})
    for s in shells:
        assert np.min(np.abs(occupied - s)) < 0.02
    assert all(np.min(np.abs(np.array(shells) - x)) < 0.02 for x in occupied)
    assert np.all(g >= 0)


def test_triangular_lattice_is_hexatic():
    psi, lonely = hexatic_order(triangular_lattice())
    assert np.all(np.abs(psi - 1) < 1e-9)
    assert not lonely.any()


def brute_psi6(sys, i, r_nb=1.5):
    total, count = 0j, 0
    for j in range(sys.n):
        if j == i:
            continue
        d = minimum_image(sys.pos[j] - sys.pos[i], sys.box)
        if math.hypot(*d) < r_nb:
            total += complex(math.cos(6 * math.atan2(d[1], d[0])), math.sin(6 * math.atan2(d[1], d[0])))
            count += 1
    return abs(total / count) if count else 0.0


def test_square_lattice_psi6_is_zero():
    sys = square_lattice(8)
    psi, _ = hexatic_order(sys)
    assert brute_psi6(sys, 0) == pytest.approx(0.0, abs=1e-12)
    assert np.abs(psi).max() < 1e-12


def test_psi6_matches_brute_force_on_random_points():
    sys = init_system(150, 0.8, seed=9)
    psi, _ = hexatic_order(sys)
    for i in range(0, 150, 7):
        assert psi[i] == pytest.approx(brute_psi6(sys, i), abs=1e-12)


def test_isolated_particle_flagged():
    sys = ParticleSystem(np.array([[1.0, 1.0], [1.5, 1.0], [6.0, 6.0]]), np.array([12.0, 12.0]))
    psi, lonely = hexatic_order(sys)
    assert lonely.tolist() == [False, False, True] and psi[2] == 0.0


def test_local_density():
    assert np.all(local_density(square_lattice(8)) == 1.0)
    cluster = np.array([[5.0, 5.0], [5.5, 5.0], [5.0, 5.5], [5.5, 5.5], [15.0, 15.0]])
    rho = local_density(ParticleSystem(cluster, np.array([20.0, 20.0])))
    assert rho[-1] == 0.0 and np.all((rho >= 0) & (rho <= 1))


# experiments

def test_short_run_protocol():
    res = run_experiment("morse", steps=60, n=128, seed=3, stride=20)
    assert [row["step"] for row in res.series] == [0, 20, 40, 59]
    assert res.order_name == "psi6" and len(res.order) == 128
    assert all(np.isfinite(row["energy_per_particle"]) for row in res.series)
    again = run_experiment("morse", steps=60, n=128, seed=3, stride=20)
    assert np.array_equal(res.system.pos, again.system.pos)


def test_salr_and_vicsek_fields():
    assert run_experiment("salr", steps=10, n=64).order_name == "local_density"
    v = run_experiment("vicsek", steps=10, n=64)
    assert v.order_name == "heading" and np.all((v.order >= 0) & (v.order < 1))
    assert "polar_order" in v.series[0]


def test_vicsek_gr_has_no_long_range_oscillation():
    peaks = []
    for seed in range(3):
        res = run_experiment("vicsek", seed=seed)
        peaks.append(res.g[res.r > 6].max())
    assert float(np.median(peaks)) <= 1.2
