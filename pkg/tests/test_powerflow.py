import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_feeder, two_bus
from gridstab.errors import NegativeSquaredVoltage, NonConvergence
from gridstab.netmodel import build_sensitivity
from gridstab.powerflow import InjectionVector, loss_term, solve_linear, solve_nonlinear_sweep


def _inj(n, p_c=None, q_c=None, p_g=None, q_g=None):
    z = np.zeros(n)
    return InjectionVector(
        z if p_c is None else np.asarray(p_c, float),
        z if q_c is None else np.asarray(q_c, float),
        z if p_g is None else np.asarray(p_g, float),
        z if q_g is None else np.asarray(q_g, float),
    )


def test_flat_profile_without_injections(mat85):
    sol = solve_linear(mat85, _inj(84), 1.02)
    assert np.all(sol.v == 1.02)


def test_two_bus_load_and_generation():
    mat = build_sensitivity(two_bus(0.1, 0.2))
    assert solve_linear(mat, _inj(1, p_c=[0.1]), 1.0).v2[0] == pytest.approx(0.98)
    assert solve_linear(mat, _inj(1, p_g=[0.1]), 1.0).v2[0] == pytest.approx(1.02)


def test_negative_v2_is_flagged_not_raised():
    mat = build_sensitivity(two_bus(0.5, 0.5))
    sol = solve_linear(mat, _inj(1, p_c=[2.0]), 1.0)
    assert not sol.valid
    with pytest.raises(NegativeSquaredVoltage):
        sol.raise_if_invalid()


def test_sweep_two_bus_losses_lower_voltage():
    net = two_bus(0.1, 0.2, p=0.1)
    mat = build_sensitivity(net)
    inj = InjectionVector.from_network(net)
    lin = solve_linear(mat, inj, 1.0)
    nl = solve_nonlinear_sweep(net, inj, 1.0)
    assert nl.v[0] < lin.v[0]
    assert abs(lin.v[0] - nl.v[0]) < 0.005
    assert nl.v2 - lin.v2 == pytest.approx(loss_term(mat, nl.c2), abs=1e-10)


def test_sweep_zero_load_is_flat(case85):
    sol = solve_nonlinear_sweep(case85, _inj(84), 1.0)
    assert sol.iterations == 1
    assert np.all(sol.v == 1.0)


def test_sweep_collapse_raises():
    net = two_bus(0.5, 0.5, p=2.0, q=2.0)
    with pytest.raises(NonConvergence):
        solve_nonlinear_sweep(net, InjectionVector.from_network(net), 1.0)


def test_loss_term_zero_current(mat85):
    assert np.all(loss_term(mat85, np.zeros(84)) == 0)


def test_sweep_satisfies_branch_equations(case85):
    inj = InjectionVector.from_network(case85)
    sol = solve_nonlinear_sweep(case85, inj, 1.0, tol=1e-10)
    parent = case85.parents()
    v2 = np.concatenate([[1.0], sol.v2])
    for e, br in enumerate(case85.branches):
        up = v2[parent[e + 1]]
        # voltage drop and current definition, per branch
        drop = up - 2 * (br.r * sol.P[e] + br.x * sol.Q[e]) + (br.r**2 + br.x**2) * sol.c2[e]
        assert abs(v2[e + 1] - drop) <= 1e-9
        assert abs(sol.c2[e] - (sol.P[e] ** 2 + sol.Q[e] ** 2) / up) <= 1e-9


def test_full_load_loss_identity(case85, mat85):
    inj = InjectionVector.from_network(case85)
    lin = solve_linear(mat85, inj, 1.0)
    nl = solve_nonlinear_sweep(case85, inj, 1.0)
    assert np.max(np.abs(lin.v - nl.v)) <= 0.02
    assert np.max(np.abs(nl.v2 - (lin.v2 + loss_term(mat85, nl.c2)))) <= 1e-8


def test_reactive_perturbation_matches_column(mat85):
    base = _inj(84, p_c=np.full(84, 0.01))
    k = 40
    dq = np.zeros(84)
    dq[k] = 0.003
    pert = _inj(84, p_c=np.full(84, 0.01), q_g=dq)
    diff = solve_linear(mat85, pert, 1.0).v2 - solve_linear(mat85, base, 1.0).v2
    assert diff == pytest.approx(-mat85.X[:, k] * 0.003, abs=1e-15)


def test_lossless_substation_flow_equals_net_load(case85, mat85):
    inj = InjectionVector.from_network(case85)
    sol = solve_linear(mat85, inj, 1.0)
    roots = [e for e, br in enumerate(case85.branches) if br.from_bus == case85.substation_id]
    assert sol.P[roots].sum() == pytest.approx(inj.p_net.sum())


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_linear_solver_is_affine(seed, a, b):
    rng = np.random.default_rng(seed)
    net = random_feeder(rng, 12)
    mat = build_sensitivity(net)
    i1 = _inj(11, *(rng.uniform(0, 0.01, (4, 11))))
    i2 = _inj(11, *(rng.uniform(0, 0.01, (4, 11))))
    mix = _inj(11, a * i1.p_c + b * i2.p_c, a * i1.q_c + b * i2.q_c, a * i1.p_g + b * i2.p_g, a * i1.q_g + b * i2.q_g)
    f = lambda inj: solve_linear(mat, inj, 1.0).v2 - 1.0
    assert f(mix) == pytest.approx(a * f(i1) + b * f(i2), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_losses_never_raise_voltage_on_load_only_feeders(seed):
    net = random_feeder(np.random.default_rng(seed), 15)
    mat = build_sensitivity(net)
    sol = solve_nonlinear_sweep(net, InjectionVector.from_network(net), 1.0)
    assert np.all(loss_term(mat, sol.c2) <= 1e-15)
