import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpflow import examples
from jumpflow.montecarlo import mean_se, simulate_batch, stream
from jumpflow.mpp import (BEYOND, DELTA, ExponentialLaw, History, MarkKernel, ModelError,
                          MppModel, Path, TabulatedLaw, UniformTailLaw, check_compensator_identity,
                          integrate_kernel, sample_next, sample_next_batch, simulate_path,
                          survival_and_hazard)


def exp_model(rate=1.0, horizon=1.0, max_jumps=None, n_marks=1, weights=None):
    kernel = MarkKernel(weights or [1.0 / n_marks] * n_marks)
    return MppModel(horizon, n_marks, lambda n, h: ExponentialLaw(rate, start=h.dmax),
                    lambda n, h: kernel, max_jumps=max_jumps, markov=True,
                    compensator_bound=rate * horizon)


def uniform_model(v, horizon=1.0):
    kernel = MarkKernel([1.0])
    return MppModel(horizon, 1, lambda n, h: UniformTailLaw(v, start=h.dmax), lambda n, h: kernel)


# -- histories and paths ---------------------------------------------------------

def test_history_rejects_unordered_times():
    with pytest.raises(ValueError):
        History(((0.5, 0), (0.3, 1)))


def test_history_dmax_and_level():
    h = History().extend(0.2, 0).extend(0.6, 1)
    assert h.level == 2 and h.dmax == 0.6 and h.marks == (0, 1)
    assert History().dmax == 0.0


def test_path_times_must_increase():
    with pytest.raises(ValueError):
        Path([(0.4, 0), (0.4, 0)], 1.0)


# -- survival and hazard -----------------------------------------------------------

def test_survival_and_hazard_exponential():
    g, a = survival_and_hazard(exp_model(), 0, History(), math.log(2))
    assert g == pytest.approx(0.5, abs=1e-15)
    assert a == pytest.approx(math.log(2), abs=1e-15)


def test_survival_and_hazard_at_dmax():
    for name, (model, _, _) in examples.shipped_models().items():
        g, a = survival_and_hazard(model, 0, History(), 0.0)
        assert (g, a) == (1.0, 0.0), name


def test_uniform_tail_survival_and_hazard():
    g, a = survival_and_hazard(uniform_model(2.0), 0, History(), 0.5)
    assert g == pytest.approx(0.75)
    assert a == pytest.approx(-math.log(0.75))


def test_survival_outside_domain_raises():
    h = History().extend(0.5, 0)
    with pytest.raises(ValueError):
        survival_and_hazard(exp_model(), 1, h, 0.2)
    with pytest.raises(ValueError):
        survival_and_hazard(exp_model(), 0, History(), 1.5)


def test_vanishing_survival_is_model_error():
    with pytest.raises(ModelError):
        survival_and_hazard(uniform_model(1.0), 0, History(), 1.0)


def test_tabulated_law_validation():
    with pytest.raises(ModelError):
        TabulatedLaw([0, 1], [1.0, 1.2])
    with pytest.raises(ModelError):
        TabulatedLaw([0, 1], [1.0, 0.0])
    with pytest.raises(ModelError):
        MarkKernel([0.5, 0.6])


@pytest.mark.parametrize("name", sorted(examples.shipped_models()))
def test_law_invariants_on_shipped_models(name):
    model, _, _ = examples.shipped_models()[name]
    rng = stream(0, "law-invariants")
    for _ in range(5):
        path = simulate_path(model, rng)
        for k in range(path.count + 1):
            h = path.history(k)
            if h.dmax >= model.horizon:
                continue
            law = model.survival_law(k, h)
            law.validate(model.horizon)
            ts = np.linspace(h.dmax, model.horizon, 101)
            a = np.asarray(law.hazard(ts))
            assert a[0] == pytest.approx(0.0, abs=1e-14)
            assert np.all(np.diff(a) >= -1e-14)
            w = model.mark_kernel(k, h).weights(ts)
            assert np.all(w >= 0) and np.allclose(w.sum(axis=1), 1.0)


@settings(max_examples=40, deadline=None)
@given(rate=st.floats(0.05, 5.0), start=st.floats(0.0, 0.9), frac=st.floats(0.0, 1.0))
def test_hazard_nondecreasing_and_zero_at_start(rate, start, frac):
    for law in (ExponentialLaw(rate, start), UniformTailLaw(1.0 + rate, start)):
        t = start + frac * (1.0 - start)
        assert float(law.hazard(start)) == pytest.approx(0.0, abs=1e-14)
        assert float(law.hazard(t)) >= -1e-14
        assert float(law.hazard(t)) <= float(law.hazard(1.0)) + 1e-12


# -- sampling -------------------------------------------------------------------

def test_sample_next_inverse_survival():
    t, _ = sample_next(exp_model(rate=2.0), 0, History(), uniforms=(0.25, 0.0))
    assert t == pytest.approx(-math.log(0.25) / 2.0)


def test_sample_next_beyond_horizon():
    assert sample_next(exp_model(), 0, History(), uniforms=(0.2, 0.5)) == (BEYOND, DELTA)


def test_sample_next_mark_inverse_cdf():
    model = exp_model(n_marks=3, weights=[0.0, 0.5, 0.5])
    _, x = sample_next(model, 0, History(), uniforms=(0.9, 0.7))
    assert x == examples.X3
    _, x = sample_next(model, 0, History(), uniforms=(0.9, 0.3))
    assert x == examples.X2


def test_empirical_survival_matches_law():
    model, _, _ = examples.tabulated()
    law = model.survival_law(0, History())
    times, _ = sample_next_batch(model, 0, History(), stream(1, "survival"), 50000)
    for t in np.linspace(0.1, 0.9, 5):
        emp = times > t
        m, se = mean_se(emp.astype(float))
        assert abs(m - float(law.survival(t))) <= 3 * se


def test_poisson_mean_count():
    batch = simulate_batch(exp_model(), 100000, 42)
    m, se = mean_se(batch.counts)
    assert abs(m - 1.0) <= 3 * se


def test_simulated_paths_increase_and_respect_cap():
    model = exp_model(rate=3.0, max_jumps=2)
    batch = simulate_batch(model, 5000, 3)
    assert batch.counts.max() <= 2
    for i in range(200):
        assert np.all(np.diff(batch.path(i).times) > 0)


def test_no_mass_model_gives_empty_paths():
    model = exp_model(rate=0.0)
    assert simulate_batch(model, 1000, 0).counts.max() == 0


def test_simulate_path_reproducible_and_cap_flag():
    model = exp_model(rate=5.0)
    p1 = simulate_path(model, stream(9, "p"))
    p2 = simulate_path(model, stream(9, "p"))
    assert p1.jumps == p2.jumps
    capped = [simulate_path(model, stream(i, "cap"), cap=2) for i in range(50)]
    assert all(p.count <= 2 for p in capped)
    assert any(p.truncated for p in capped)


def test_batch_independent_of_workers():
    model, _, _ = examples.uniform_tail()
    a = simulate_batch(model, 3000, 5, workers=1)
    b = simulate_batch(model, 3000, 5, workers=4)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.marks, b.marks)


# -- kernel integrals and the compensator identity ----------------------------------------

def test_integrate_kernel_closed_forms():
    assert integrate_kernel(exp_model(rate=1.5), 0, History(), lambda s, x: 1.0, 0.0, 0.8) \
        == pytest.approx(1.2, abs=1e-12)
    assert integrate_kernel(exp_model(), 0, History(), lambda s, x: s, 0.0, 1.0) \
        == pytest.approx(0.5, abs=1e-12)
    model = uniform_model(1.0, horizon=0.9)
    assert integrate_kernel(model, 0, History(), lambda s, x: 1.0, 0.0, 0.5) \
        == pytest.approx(math.log(2), abs=1e-9)


@pytest.mark.parametrize("name", sorted(examples.shipped_models()))
def test_kernel_integral_of_one_is_total_hazard(name):
    model, _, _ = examples.shipped_models()[name]
    law = model.survival_law(0, History())
    total = integrate_kernel(model, 0, History(), lambda s, x: 1.0, 0.0, model.horizon)
    assert total == pytest.approx(float(law.hazard(model.horizon)), abs=1e-9)


def test_compensator_identity_exponential_closed_form():
    lhs, rhs, se = check_compensator_identity(exp_model(), 0, History(), lambda s, x: 1.0,
                                              100000, stream(0, "ci"))
    assert lhs == pytest.approx(1.0, abs=1e-12)
    assert abs(lhs - rhs) <= 3 * se


def test_compensator_identity_no_mass():
    lhs, rhs, se = check_compensator_identity(exp_model(rate=0.0), 0, History(),
                                              lambda s, x: 1.0, 1000, stream(0, "ci"))
    assert lhs == 0.0 and rhs == 0.0


TEST_INTEGRANDS = {
    "one": lambda s, x: np.ones_like(np.asarray(s, float) + np.asarray(x, float)),
    "time": lambda s, x: np.asarray(s, float) + 0.0 * np.asarray(x, float),
    "mark": lambda s, x: 1.0 + np.asarray(x, float) + 0.0 * np.asarray(s, float),
}


@pytest.mark.parametrize("name", sorted(examples.shipped_models()))
@pytest.mark.parametrize("integrand", sorted(TEST_INTEGRANDS))
def test_compensator_identity_on_shipped_models(name, integrand):
    model, _, _ = examples.shipped_models()[name]
    h = TEST_INTEGRANDS[integrand]
    for level, hist in ((0, History()), (1, History().extend(0.3, 0))):
        lhs, rhs, se = check_compensator_identity(model, level, hist, h, 100000,
                                                  stream(7, f"{name}-{integrand}", level))
        assert abs(lhs - rhs) <= 3 * se, (level, lhs, rhs, se)
