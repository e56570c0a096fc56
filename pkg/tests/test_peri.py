import math
import types
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from pericrack.errors import (ConsistencyError, DegenerateBondError, DivergenceError, InputError, ParameterError,
                              ZeroWeightedVolumeError)
from pericrack.peri import (LPS, PMB, VES, Body, Simulation, assemble_internal_force, bond_stretch,
                            build_neighborhoods, compute_state, critical_stretch, damage_field, dilatation,
                            force_vector, fracture_energy, lps_force_state, make_model, pmb_force_state,
                            pmb_force_state_checked, pmb_spring_constant, relax_back_extension, stable_timestep,
                            step_velocity_verlet, strain_energy, ves_force_state, weighted_volume)

import oracles


def grid(nx, ny, nz, h=1.0):
    pts = np.array([(i * h, j * h, k * h) for i in range(nx) for j in range(ny) for k in range(nz)], float)
    return Body(pts, np.full(len(pts), h**3), 1000.0)


# -- material constants ------------------------------------------------------------------

def test_spring_constant_reference_values():
    # hand-evaluated; the published 1.6863e22 corresponds to the rounded horizon 0.0015
    assert_allclose(pmb_spring_constant(14.9e9, 0.0015001), 1.685885e22, rtol=1e-6)
    assert_allclose(pmb_spring_constant(14.9e9, 0.0015), 1.6863e22, rtol=1e-4)
    assert_allclose(pmb_spring_constant(math.pi / 18, 1.0), 1.0, rtol=1e-15)
    assert_allclose(pmb_spring_constant(2.0, 0.3), 2 * pmb_spring_constant(1.0, 0.3), rtol=1e-15)


@pytest.mark.parametrize("args", [(0, 1), (-1, 1), (1, 0), (1, -2)])
def test_spring_constant_rejects_nonpositive(args):
    with pytest.raises(ParameterError):
        pmb_spring_constant(*args)


def test_critical_stretch_examples():
    K, d = 14.9e9, 0.0015001
    assert_allclose(critical_stretch(9 * K * d / 5, K, d), 1.0, rtol=1e-15)
    s0 = critical_stretch(3.0, K, d)
    assert_allclose(critical_stretch(3.0, 4 * K, d), s0 / 2, rtol=1e-14)
    with pytest.raises(ParameterError):
        critical_stretch(0.0, K, d)


@given(st.floats(1e-4, 1e-1), st.floats(1e8, 1e11), st.floats(1e-4, 1e-2))
def test_critical_stretch_round_trip(s0, K, d):
    c = pmb_spring_constant(K, d)
    assert_allclose(critical_stretch(fracture_energy(c, s0, d), K, d), s0, rtol=1e-12)


def test_model_validation():
    with pytest.raises(ParameterError):
        PMB(bulk_modulus=-1)
    with pytest.raises(ParameterError):
        LPS(shear_modulus=0)
    with pytest.raises(ParameterError):
        VES(relaxation=1.0)
    with pytest.raises(ParameterError):
        VES(time_constant=0)
    with pytest.raises(ParameterError):
        make_model("foo")
    assert isinstance(make_model("VES", relaxation=0.0), VES)
    assert PMB().spring_constant == pmb_spring_constant(14.9e9, 0.0015001)


# -- neighbourhoods ------------------------------------------------------------------------

def test_two_particle_neighbourhoods():
    d = 1.0
    near = build_neighborhoods(Body([[0, 0, 0], [0.5 * d, 0, 0]], 1.0, 1.0), d)
    far = build_neighborhoods(Body([[0, 0, 0], [1.5 * d, 0, 0]], 1.0, 1.0), d)
    assert len(near) == 1 and len(far) == 0


def test_grid_family_sizes():
    bonds = build_neighborhoods(grid(3, 3, 1), 1.05)
    counts = bonds.counts().reshape(3, 3)
    assert counts[0, 0] == counts[0, 2] == counts[2, 0] == counts[2, 2] == 2
    assert counts[1, 1] == 4
    assert counts[0, 1] == 3


def test_neighbourhood_errors():
    with pytest.raises(ParameterError):
        build_neighborhoods(grid(2, 1, 1), 0.0)
    with pytest.raises(InputError, match="0 and 2"):
        build_neighborhoods(Body([[0, 0, 0], [1, 0, 0], [0, 0, 0]], 1.0, 1.0), 2.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.floats(0.1, 0.6), st.integers(0, 2**31))
def test_neighbourhoods_match_brute_force(n, horizon, seed):
    pts = np.random.default_rng(seed).random((n, 3))
    bonds = build_neighborhoods(Body(pts, 1.0, 1.0), horizon)
    assert sorted(zip(bonds.i.tolist(), bonds.j.tolist())) == oracles.brute_pairs(pts, horizon)
    assert np.all(bonds.length <= horizon) and np.all(bonds.length > 0)


def test_families_are_symmetric():
    bonds = build_neighborhoods(grid(3, 3, 2), 1.5)
    for p in range(9):
        for b in bonds.family(p):
            back = [r for r in bonds.family(b.j) if r.j == p]
            assert len(back) == 1
            assert_allclose(back[0].zeta, -b.zeta)
            assert back[0].broken == b.broken


# -- kinematics and force states ------------------------------------------------------------

def test_bond_stretch_examples():
    assert bond_stretch([1, 0, 0], [0, 0, 0])[0] == 0
    assert_allclose(bond_stretch([1, 0, 0], [0.1, 0, 0])[0], 0.1, rtol=1e-14)
    s, y = bond_stretch([1, 0, 0], [-0.5, 0, 0])
    assert_allclose((s, y), (-0.5, 0.5))
    with pytest.raises(DegenerateBondError):
        bond_stretch([0, 0, 0], [1, 0, 0])


def test_pmb_force_state_examples():
    model = PMB()
    assert np.all(pmb_force_state([1e-3, 0, 0], [0, 0, 0], model) == 0)
    assert np.all(pmb_force_state([1e-3, 0, 0], [1e-5, 0, 0], model, broken=True) == 0)
    t = pmb_force_state([1e-3, 0, 0], [1e-6, 0, 0], model)
    assert_allclose(t, [0.5 * model.spring_constant * 1e-3, 0, 0], rtol=1e-9)
    with pytest.raises(DegenerateBondError):
        pmb_force_state([1e-3, 0, 0], [-1e-3, 0, 0], model)


def test_pmb_history_condition():
    model = PMB()
    zeta = np.array([1e-3, 0, 0])
    crit = 1e-3
    f1, broken = pmb_force_state_checked(zeta, zeta * 0.9 * crit, model, False, crit)
    assert not broken and np.linalg.norm(f1) > 0
    f2, broken = pmb_force_state_checked(zeta, zeta * 1.1 * crit, model, broken, crit)
    assert broken and np.all(f2 == 0)
    f3, broken = pmb_force_state_checked(zeta, zeta * 0.1 * crit, model, broken, crit)
    assert broken and np.all(f3 == 0)


def test_weighted_volume_examples():
    assert weighted_volume([2.0], [3.0]) == 12.0
    with pytest.raises(ZeroWeightedVolumeError):
        weighted_volume([2.0, 1.0], [3.0, 1.0], broken=[True, True])
    L, V = np.array([1.0, 2.0, 0.5, 1.5]), np.array([1.0, 0.5, 2.0, 1.0])
    assert_allclose(weighted_volume(L, V), weighted_volume(L[:2], V[:2]) + weighted_volume(L[2:], V[2:]))


def test_dilatation_examples():
    L, V = np.array([1.0, 2.0, 0.5]), np.array([1.0, 0.5, 2.0])
    m = weighted_volume(L, V)
    assert dilatation(L, np.zeros(3), V, m) == 0
    eps = 1e-4
    assert_allclose(dilatation(L, eps * L, V, m), 3 * eps, rtol=1e-12)
    assert dilatation(L, -eps * L, V, m) < 0
    with pytest.raises(ZeroWeightedVolumeError):
        dilatation(L, L, V, 0.0)


def test_lps_force_state_examples():
    model = LPS()
    zeta = np.array([1e-3, 0.0, 0.0])
    m = 2e-15
    assert lps_force_state(zeta, np.zeros(3), model, 0.0, m) == 0
    eps = 1e-4
    t = lps_force_state(zeta, eps * zeta, model, 3 * eps, m)
    assert_allclose(t, 3 * model.bulk_modulus * 3 * eps / m * 1e-3, rtol=1e-9)
    no_shear = types.SimpleNamespace(bulk_modulus=model.bulk_modulus, shear_modulus=0.0)
    eta = np.array([2e-7, 1e-7, 0.0])
    theta = 1e-5
    L = 1e-3
    e = np.linalg.norm(zeta + eta) - L
    assert_allclose(lps_force_state(zeta, eta, no_shear, theta, m), 3 * model.bulk_modulus * theta / m * L)
    alpha = 15 * model.shear_modulus / m
    expect = 3 * model.bulk_modulus * theta / m * L + alpha * (e - theta * L / 3)
    assert_allclose(lps_force_state(zeta, eta, model, theta, m), expect, rtol=1e-12)


def test_ves_zero_relaxation_equals_lps():
    rng = np.random.default_rng(0)
    zeta = rng.normal(size=(100, 3)) * 1e-3
    eta = rng.normal(size=(100, 3)) * 1e-6
    theta, m = rng.normal(size=100) * 1e-4, rng.random(100) * 1e-14 + 1e-15
    t_ves, _ = ves_force_state(zeta, eta, VES(relaxation=0.0), theta, m, rng.normal(size=100) * 1e-7, 1e-7)
    assert np.array_equal(t_ves, lps_force_state(zeta, eta, LPS(), theta, m))


def test_ves_relaxes_to_long_term_modulus():
    model = VES(relaxation=0.5, time_constant=1e-3)
    zeta, eta = np.array([1e-3, 0, 0]), np.array([1e-6, 2e-7, 0])
    theta, m = 1e-4, 2e-15
    edb = 0.0
    for _ in range(2000):
        t, edb = ves_force_state(zeta, eta, model, theta, m, edb, 1e-5)
    L = 1e-3
    e = np.linalg.norm(zeta + eta) - L
    ed = e - theta * L / 3
    alpha = 15 * model.shear_modulus / m
    expect = 3 * model.bulk_modulus * theta / m * L + (1 - model.relaxation) * alpha * ed
    assert_allclose(t, expect, rtol=1e-8)
    t0, _ = ves_force_state(zeta, np.zeros(3), model, 0.0, m, 0.0, 1e-5)
    assert t0 == 0
    with pytest.raises(ParameterError):
        ves_force_state(zeta, eta, model, theta, m, 0.0, 0.0)


def test_relaxation_closed_form():
    ed, tau = 2.0, 0.5
    edb = 0.0
    for _ in range(10):
        edb = relax_back_extension(edb, ed, 0.1, tau)
    assert_allclose(edb, ed * (1 - math.exp(-1.0 / tau)), rtol=1e-13)


random_bond = st.tuples(*[st.floats(-1e-3, 1e-3) for _ in range(3)]).filter(
    lambda z: np.linalg.norm(z) > 1e-5)


@settings(max_examples=200)
@given(random_bond, st.tuples(*[st.floats(-1e-6, 1e-6) for _ in range(3)]), st.floats(-1e-3, 1e-3),
       st.floats(1e-16, 1e-13), st.floats(-1e-7, 1e-7))
def test_force_antisymmetry_and_direction(zeta, eta, theta, m, edb):
    zeta, eta = np.array(zeta), np.array(eta)
    vectors = [pmb_force_state(zeta, eta, PMB()),
               force_vector(lps_force_state(zeta, eta, LPS(), theta, m), zeta, eta),
               force_vector(ves_force_state(zeta, eta, VES(), theta, m, edb, 1e-7)[0], zeta, eta)]
    mirrored = [pmb_force_state(-zeta, -eta, PMB()),
                force_vector(lps_force_state(-zeta, -eta, LPS(), theta, m), -zeta, -eta),
                force_vector(ves_force_state(-zeta, -eta, VES(), theta, m, edb, 1e-7)[0], -zeta, -eta)]
    d = zeta + eta
    for f, g in zip(vectors, mirrored):
        assert_allclose(g, -f, rtol=1e-15, atol=0)
        assert np.linalg.norm(np.cross(f, d)) <= 1e-12 * np.linalg.norm(f) * np.linalg.norm(d) + 1e-300


# -- assembly ------------------------------------------------------------------------------------

def perturbed_body(seed, n=(4, 4, 3), h=1e-3, amp=2e-6):
    body = grid(*n, h=h)
    body.displacements[:] = np.random.default_rng(seed).normal(size=body.displacements.shape) * amp
    return body


def test_undeformed_body_has_no_acceleration():
    body = grid(4, 4, 2, h=1e-3)
    bonds = build_neighborhoods(body, 1.6e-3)
    for model in (PMB(horizon=1.6e-3), LPS(horizon=1.6e-3)):
        state = compute_state(body, bonds) if model.state_based else None
        assert np.all(assemble_internal_force(body, bonds, model, state) == 0)


@pytest.mark.parametrize("seed", range(3))
def test_pmb_assembly_matches_loop_oracle(seed):
    body = perturbed_body(seed)
    bonds = build_neighborhoods(body, 1.8e-3)
    model = PMB(horizon=1.8e-3)
    acc = assemble_internal_force(body, bonds, model)
    ref = oracles.pmb_acceleration(body.ref_positions, body.displacements, body.volumes, body.density,
                                   model.spring_constant, 1.8e-3)
    assert_allclose(acc, ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())


@pytest.mark.parametrize("seed", range(3))
def test_lps_assembly_matches_loop_oracle(seed):
    body = perturbed_body(seed)
    bonds = build_neighborhoods(body, 1.8e-3)
    model = LPS(horizon=1.8e-3, shear_modulus=7e9)
    acc = assemble_internal_force(body, bonds, model, compute_state(body, bonds))
    ref = oracles.lps_acceleration(body.ref_positions, body.displacements, body.volumes, body.density,
                                   model.bulk_modulus, model.shear_modulus, 1.8e-3)
    assert_allclose(acc, ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())


def test_internal_forces_cancel():
    body = perturbed_body(5)
    body.external_force[:] = np.random.default_rng(1).normal(size=(len(body), 3)) * 1e6
    bonds = build_neighborhoods(body, 1.8e-3)
    for model in (PMB(horizon=1.8e-3), LPS(horizon=1.8e-3), VES(horizon=1.8e-3)):
        state = compute_state(body, bonds) if model.state_based else None
        acc = assemble_internal_force(body, bonds, model, state)
        total = (body.density * acc * body.volumes[:, None]).sum(axis=0)
        expect = (body.external_force * body.volumes[:, None]).sum(axis=0)
        scale = np.abs(body.density * acc * body.volumes[:, None]).sum()
        assert np.all(np.abs(total - expect) <= 1e-12 * scale)


def test_two_particle_pmb_force():
    L, s, V = 1e-3, 1e-4, 2e-9
    body = Body([[0, 0, 0], [L, 0, 0]], V, 2000.0, displacements=[[0, 0, 0], [s * L, 0, 0]])
    model = PMB(horizon=1.5e-3)
    acc = assemble_internal_force(body, build_neighborhoods(body, 1.5e-3), model)
    force = body.density * acc
    assert_allclose(force[0], [model.spring_constant * s * V, 0, 0], rtol=1e-9)
    assert_allclose(force[1], -force[0], rtol=1e-15)


def test_stale_state_is_rejected():
    body = perturbed_body(0)
    bonds = build_neighborhoods(body, 1.8e-3)
    state = compute_state(body, bonds)
    bonds.break_bonds(np.arange(len(bonds)) == 0)
    with pytest.raises(ConsistencyError):
        assemble_internal_force(body, bonds, LPS(horizon=1.8e-3), state)
    with pytest.raises(ConsistencyError):
        assemble_internal_force(body, bonds, LPS(horizon=1.8e-3), None)


def test_lps_dilatation_under_uniform_expansion():
    body = grid(7, 7, 7, h=1e-3)
    eps = 1e-5
    body.displacements[:] = eps * body.ref_positions
    bonds = build_neighborhoods(body, 3.0015e-3)
    theta = compute_state(body, bonds).dilatation
    centre = 3 * 49 + 3 * 7 + 3
    assert_allclose(theta[centre], 3 * eps, rtol=1e-9)
    assert_allclose(theta, 3 * eps, rtol=1e-9)


# -- integration ---------------------------------------------------------------------------------

def test_free_flight():
    body = Body([[0, 0, 0], [1, 0, 0]], 1.0, 1.0, velocities=[[1.0, 2.0, -1.0], [0.5, 0, 0]])
    bonds = build_neighborhoods(body, 0.1)
    sim = Simulation(body, bonds, PMB(horizon=0.1), 1e-3)
    sim.run(1000)
    assert_allclose(body.displacements, np.array([[1.0, 2.0, -1.0], [0.5, 0, 0]]) * 1.0, rtol=1e-12)


def two_body(amplitude=1e-6, L=1e-3, V=1e-9, rho=2200.0):
    model = PMB(horizon=1.5e-3)
    body = Body([[0, 0, 0], [L, 0, 0]], V, rho, displacements=[[0, 0, 0], [amplitude, 0, 0]])
    omega = math.sqrt(2 * model.spring_constant * V / (rho * L))
    return body, model, omega


def test_two_body_oscillation_frequency():
    body, model, omega = two_body()
    period = 2 * math.pi / omega
    dt = period / 1000
    sim = Simulation(body, build_neighborhoods(body, model.horizon), model, dt, breaking=False)
    rel, times = [], []
    for _ in range(5000):
        sim.step()
        rel.append(body.displacements[1, 0] - body.displacements[0, 0])
        times.append(sim.time)
    rel = np.array(rel)
    up = np.flatnonzero((rel[:-1] < 0) & (rel[1:] >= 0))
    t_cross = [times[k] + (times[k + 1] - times[k]) * (-rel[k]) / (rel[k + 1] - rel[k]) for k in up]
    measured = np.mean(np.diff(t_cross))
    assert_allclose(measured, period, rtol=0.01)


def test_two_body_energy_drift():
    body, model, omega = two_body()
    dt = 2 * math.pi / omega / 1000
    bonds = build_neighborhoods(body, model.horizon)
    sim = Simulation(body, bonds, model, dt, breaking=False)

    def energy():
        return body.kinetic_energy() + strain_energy(body, bonds, model)
    e0 = energy()
    worst = 0.0
    for _ in range(10_000):
        step_velocity_verlet(sim)
        worst = max(worst, abs(energy() - e0) / e0)
    assert worst < 1e-3


def test_momentum_conserved_on_free_body():
    body = grid(10, 10, 10, h=1e-3)
    rng = np.random.default_rng(3)
    body.displacements[:] = rng.normal(size=(1000, 3)) * 1e-7
    body.velocities[:] = rng.normal(size=(1000, 3)) + [3.0, -2.0, 1.0]
    model = PMB(horizon=1.8e-3)
    bonds = build_neighborhoods(body, model.horizon)
    sim = Simulation(body, bonds, model, stable_timestep(body, bonds, model))
    p0 = body.momentum()
    sim.run(100)
    assert np.linalg.norm(body.momentum() - p0) < 1e-10 * np.linalg.norm(p0)


def test_damage_is_monotone_and_bounded():
    body = grid(6, 6, 2, h=1e-3)
    rng = np.random.default_rng(0)
    body.velocities[:] = rng.normal(size=body.velocities.shape) * 30.0
    model = PMB(horizon=1.6e-3)
    bonds = build_neighborhoods(body, model.horizon)
    sim = Simulation(body, bonds, model, stable_timestep(body, bonds, model))
    prev = sim.damage()
    broken_prev = bonds.broken.copy()
    for _ in range(200):
        sim.step()
        d = sim.damage()
        assert np.all(d >= prev) and np.all((d >= 0) & (d <= 1))
        assert np.all(bonds.broken[broken_prev])
        prev, broken_prev = d, bonds.broken.copy()
    assert prev.max() > 0


def test_broken_bonds_carry_no_force():
    body = perturbed_body(2)
    bonds = build_neighborhoods(body, 1.8e-3)
    bonds.break_bonds(np.ones(len(bonds), dtype=bool))
    assert np.all(assemble_internal_force(body, bonds, PMB(horizon=1.8e-3)) == 0)
    assert np.all(damage_field(bonds) == 1)


def test_damage_ratio():
    bonds = build_neighborhoods(grid(3, 3, 1), 1.05)
    assert np.all(damage_field(bonds) == 0)
    centre = [k for k in range(len(bonds)) if 4 in (bonds.i[k], bonds.j[k])]
    bonds.break_bonds(np.isin(np.arange(len(bonds)), centre[:2]))
    assert damage_field(bonds)[4] == 0.5


def test_divergence_reports_step():
    body = two_body()[0]
    model = PMB(horizon=1.5e-3)
    sim = Simulation(body, build_neighborhoods(body, model.horizon), model, 1e-3, breaking=False)
    with pytest.raises(DivergenceError) as info:
        with np.errstate(all="ignore"):
            sim.run(2000)
    assert info.value.step is not None and info.value.step > 0


def test_collapsed_bond_is_broken_with_warning():
    body = Body([[0, 0, 0], [1e-3, 0, 0]], 1e-9, 2200.0, displacements=[[0, 0, 0], [-1e-3, 0, 0]])
    bonds = build_neighborhoods(body, 1.5e-3)
    with pytest.warns(RuntimeWarning, match="collapsed"):
        Simulation(body, bonds, PMB(horizon=1.5e-3), 1e-9)
    assert bonds.broken.all()


def test_stable_timestep_pmb_formula():
    body = grid(4, 4, 4, h=1e-3)
    model = PMB(horizon=1.8e-3)
    bonds = build_neighborhoods(body, model.horizon)
    S = np.zeros(len(body))
    for a, b in oracles.brute_pairs(body.ref_positions, model.horizon):
        L = np.linalg.norm(body.ref_positions[a] - body.ref_positions[b])
        S[a] += model.spring_constant * body.volumes[b] / L
        S[b] += model.spring_constant * body.volumes[a] / L
    assert_allclose(stable_timestep(body, bonds, model), 0.8 * math.sqrt(2 * body.density / S.max()), rtol=1e-12)


@pytest.mark.parametrize("model", [PMB(horizon=1.8e-3), LPS(horizon=1.8e-3), VES(horizon=1.8e-3)])
def test_stable_timestep_keeps_runs_bounded(model):
    body = perturbed_body(4, n=(6, 6, 6))
    bonds = build_neighborhoods(body, model.horizon)
    sim = Simulation(body, bonds, model, stable_timestep(body, bonds, model), breaking=False)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sim.run(500)
    assert np.abs(body.displacements).max() < 1e-5
