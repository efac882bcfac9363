import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpflow import examples
from jumpflow.bsde import Solver, TerminalSpec
from jumpflow.control import (ControlModel, FeedbackPolicy, LevelPolicy, cost_estimate,
                              direct_cost, exhaustive_level_costs, girsanov_weight,
                              hamiltonian_min, optimality_check, synthesize_policy)
from jumpflow.montecarlo import mean_se, simulate_batch
from jumpflow.mpp import Path


def constant_model(actions, cost=lambda t, u: 0.0 * t, terminal=None, r=None, max_jumps=4):
    base, _, _ = examples.poisson(1.0, 1.0, max_jumps=max_jumps)
    terminal = terminal or TerminalSpec(lambda n, h: 0.0, marks_only=True)
    r = r or (lambda t, x, u: u + 0.0 * t)
    return ControlModel(base, tuple(actions), r=r, l=cost, terminal=terminal, C=max(actions))


@pytest.fixture(scope="module")
def desk():
    return examples.desk_control()


# -- Hamiltonian -------------------------------------------------------------------

def test_hamiltonian_examples(desk):
    W = np.array([1.0])
    assert hamiltonian_min(desk, 0.3, [-1.0], W) == (pytest.approx(-1.2), 1)
    f, j = hamiltonian_min(desk, 0.3, [-0.4], W)
    assert f == pytest.approx(0.0, abs=1e-15) and j == 0
    assert hamiltonian_min(desk, 0.3, [0.0], W) == (pytest.approx(0.2), 0)


@settings(max_examples=60, deadline=None)
@given(z=st.floats(-5, 5), t=st.floats(0, 1))
def test_hamiltonian_below_every_action(desk, z, t):
    W = np.array([1.0])
    f, j = hamiltonian_min(desk, t, [z], W)
    vals = desk.objective(np.array([t]), np.array([[z]]), W[None, :])[0]
    assert np.all(f <= vals) and f == vals[j]


@settings(max_examples=60, deadline=None)
@given(z=st.lists(st.floats(-5, 5), min_size=4, max_size=4), w=st.floats(0, 1))
def test_hamiltonian_lipschitz(z, w):
    base, _, _ = examples.uniform_tail()
    cm = ControlModel(base, (0.5, 1.0, 2.0), r=lambda t, x, u: u * (1 + 0.0 * x) / (1 + x),
                      l=lambda t, u: 0.3 * u + 0.0 * t,
                      terminal=TerminalSpec(lambda n, h: 0.0, marks_only=True), C=2.0)
    gen = cm.generator()
    W = np.array([[w, 1 - w]])
    t = np.array([0.4])
    zeta, zeta2 = np.array([z[:2]]), np.array([z[2:]])
    f1 = gen.integrand(t, np.zeros(1), zeta, W)[0]
    f2 = gen.integrand(t, np.zeros(1), zeta2, W)[0]
    assert abs(f1 - f2) <= cm.C * float(W[0] @ np.abs(zeta - zeta2)[0]) + 1e-12


def test_intensity_factor_bounds_checked():
    with pytest.raises(ValueError):
        constant_model((0.5, 2.0), r=lambda t, x, u: 3.0 * u + 0.0 * t)


# -- Girsanov weights and costs ---------------------------------------------------------

def test_weight_unit_factor():
    cm = constant_model((1.0,))
    path = Path([(0.2, 0), (0.6, 0)], 1.0)
    assert girsanov_weight(cm, LevelPolicy([0]), path) == pytest.approx(1.0, abs=1e-14)


def test_weight_without_jumps():
    cm = constant_model((0.5,))
    assert girsanov_weight(cm, LevelPolicy([0]), Path([], 1.0)) == pytest.approx(math.exp(0.5))


def test_weight_one_jump():
    cm = constant_model((2.0,))
    w = girsanov_weight(cm, LevelPolicy([0]), Path([(0.5, 0)], 1.0))
    assert w == pytest.approx(2.0 * math.exp(-1.0), abs=1e-12)
    assert w == pytest.approx(0.7358, abs=1e-4)


def test_zero_intensity_weight_is_flagged():
    cm = constant_model((0.0, 1.0))
    est = cost_estimate(cm, LevelPolicy([0]), 2000, 0)
    assert est.zero_weights > 0


def test_constant_cost_any_policy():
    c = -0.7
    cm = constant_model((0.5, 2.0), terminal=TerminalSpec(lambda n, h: c, marks_only=True))
    for pol in (LevelPolicy([0]), LevelPolicy([1, 0, 1, 0])):
        assert Solver(cm.base, cm.terminal, cm.policy_generator(pol)).Y0() == pytest.approx(c)
        est = cost_estimate(cm, pol, 20000, 1)
        assert abs(est.J - c) <= 3 * est.se


def test_ineffective_control_matches_base_measure():
    cm = constant_model((1.0,), cost=lambda t, u: 0.3 + 0.0 * t,
                        terminal=TerminalSpec(lambda n, h: float(n), marks_only=True))
    est = cost_estimate(cm, LevelPolicy([0]), 20000, 2)
    batch = simulate_batch(cm.base, 20000, 99)
    m, se = mean_se(0.3 * batch.comp_T + batch.counts)
    assert abs(est.J - m) <= 3 * math.hypot(est.se, se)


def test_mean_weight_is_one(desk):
    for pol in (LevelPolicy([0]), LevelPolicy([1]), LevelPolicy([1, 0, 0, 1])):
        est = cost_estimate(desk, pol, 50000, 3)
        assert abs(est.mean_weight - 1.0) <= 3 * est.weight_se


# -- policies and optimality ------------------------------------------------------------

def test_separable_policy():
    cm = constant_model((0.5, 1.0, 2.0), cost=lambda t, u: (u - 1.0) ** 2 + 0.0 * t,
                        r=lambda t, x, u: 1.0 + 0.0 * t)
    pol = synthesize_policy(cm, Solver(cm.base, cm.terminal, cm.generator()))
    assert np.all(pol.actions(0, Path([], 1.0).history(), np.linspace(0, 1, 11)) == 1)


def test_single_action_problem():
    cm = constant_model((1.5,), cost=lambda t, u: 0.2 * u + 0.0 * t,
                        terminal=TerminalSpec(lambda n, h: -float(n), marks_only=True))
    rep = optimality_check(cm, 20000, 0, 4, exhaustive=False, n_grid=400)
    assert rep.passed and len(rep.rows) == 1


def test_desk_optimality(desk):
    rep = optimality_check(desk, 20000, 4, 5, exhaustive=True, n_grid=500)
    assert rep.passed, [f for f in rep.findings if not f.passed]
    assert rep.rows[0]["policy_id"] == "optimal"


def test_desk_exhaustive_search_matches_solver(desk):
    table = exhaustive_level_costs(desk, dict(n_grid=500))
    y0 = Solver(desk.base, desk.terminal, desk.generator(), n_grid=500).Y0()
    assert min(table.values()) == pytest.approx(y0, abs=1e-9)
    assert all(v >= y0 - 1e-9 for v in table.values())


def test_competitor_equal_to_optimal(desk):
    solver = Solver(desk.base, desk.terminal, desk.generator(), n_grid=500)
    opt = FeedbackPolicy(desk, solver)
    batch = simulate_batch(desk.base, 20000, 6, kind="control")
    a = cost_estimate(desk, opt, 0, 0, batch, 500)
    b = cost_estimate(desk, FeedbackPolicy(desk, solver), 0, 0, batch, 500)
    assert abs(a.J - b.J) <= 3 * a.se


def test_direct_simulation_cross_check(desk):
    solver = Solver(desk.base, desk.terminal, desk.generator(), n_grid=500)
    J, se = direct_cost(desk, FeedbackPolicy(desk, solver), 4000, 7)
    assert abs(J - solver.Y0()) <= 3 * se
