"""Shipped example models with their closed-form or reference values."""

from __future__ import annotations

import math

import numpy as np

from .bsde import GeneratorSpec, TerminalSpec
from .control import ControlModel
from .mpp import ExponentialLaw, MarkKernel, MppModel, TabulatedLaw, UniformTailLaw

X1, X2, X3 = 0, 1, 2


# -- two-jump linear example ----------------------------------------------------

def worked_example(rate0=1.0, rate1=2.0, horizon=1.0):
    """Three marks, at most two jumps; the terminal value is 1 when the second mark is x2.

    Level 0 jumps at rate ``rate0`` with mark x1, level 1 at rate ``rate1``
    with marks x2, x3 equally likely.
    """
    kernels = (MarkKernel([1.0, 0.0, 0.0]), MarkKernel([0.0, 0.5, 0.5]))
    rates = (rate0, rate1)
    model = MppModel(
        horizon=horizon, n_marks=3,
        law=lambda n, h: ExponentialLaw(rates[n], start=h.dmax),
        kernel=lambda n, h: kernels[min(n, 1)],
        max_jumps=2, markov=True, compensator_bound=(rate0 + rate1) * horizon,
        name="worked-example")
    terminal = TerminalSpec(lambda n, h: 1.0 if n == 2 and h.marks[1] == X2 else 0.0,
                            marks_only=True)
    return model, terminal, GeneratorSpec.martingale()


def worked_y1(t, rate1=2.0, horizon=1.0):
    """Closed form of the level-1 function (any first jump time r <= t)."""
    t = np.asarray(t, dtype=float)
    return 0.5 * (1.0 - np.exp(-rate1 * (horizon - t)))


def worked_y0(t, rate0=1.0, rate1=2.0, horizon=1.0):
    """Closed form of the level-0 function: int_t^T y1(s) e^{-rate0 (s-t)} rate0 ds."""
    t = np.asarray(t, dtype=float)
    l0, l1 = rate0, rate1
    tau = horizon - t
    first = 0.5 * (1.0 - np.exp(-l0 * tau))
    if abs(l0 - l1) < 1e-14:
        second = 0.5 * l0 * tau * np.exp(-l0 * tau)
    else:
        second = 0.5 * l0 / (l0 - l1) * (np.exp(-l1 * tau) - np.exp(-l0 * tau))
    return first - second


def worked_Y(path, t, rate0=1.0, rate1=2.0, horizon=1.0):
    """Closed-form Y_t along a path of the worked example."""
    n = int(np.searchsorted(path.times, t, side="right"))
    if n == 0:
        return float(worked_y0(t, rate0, rate1, horizon))
    if n == 1:
        return float(worked_y1(t, rate1, horizon))
    return 1.0 if path.jumps[1][1] == X2 else 0.0


WORKED_Y0 = 0.5 * (1.0 - math.exp(-1.0)) ** 2


# -- Poisson counting process ---------------------------------------------------

def poisson(rate=1.0, horizon=1.0, max_jumps=None, terminal_cap=5):
    """Univariate Poisson process with terminal value min(N_T, terminal_cap)."""
    kernel = MarkKernel([1.0])
    model = MppModel(
        horizon=horizon, n_marks=1,
        law=lambda n, h: ExponentialLaw(rate, start=h.dmax),
        kernel=lambda n, h: kernel, max_jumps=max_jumps, markov=True,
        compensator_bound=rate * horizon, name="poisson")
    terminal = TerminalSpec(lambda n, h: float(min(n, terminal_cap)), marks_only=True)
    return model, terminal, GeneratorSpec.martingale()


# -- renewal-type marked models --------------------------------------------------

def uniform_tail(v=2.0, horizon=1.0, max_jumps=3):
    """Jump times uniform on [D^max, v] (seen before v), two marks with a time-varying kernel."""
    kernel = MarkKernel(fn=lambda ts: np.column_stack((1.0 - 0.5 * ts / horizon, 0.5 * ts / horizon)))
    model = MppModel(
        horizon=horizon, n_marks=2,
        law=lambda n, h: _uniform_from(v, h.dmax),
        kernel=lambda n, h: kernel, max_jumps=max_jumps, markov=True,
        compensator_bound=math.log(v / (v - horizon)),
        name="uniform-tail")
    terminal = TerminalSpec(lambda n, h: float(sum(1 for x in h.marks if x == 1)) - 0.5 * n,
                            marks_only=True)
    return model, terminal, GeneratorSpec.martingale()


def _uniform_from(v, start):
    # absolute-time hazard 1/(v - t): the conditioned law keeps the same rate
    return UniformTailLaw(v, start=start)


def tabulated(horizon=1.0, max_jumps=3):
    """Piecewise-linear survival table, two marks with fixed weights."""
    times = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    values = np.array([1.0, 0.8, 0.55, 0.4, 0.3])
    kernel = MarkKernel([0.3, 0.7])
    model = MppModel(
        horizon=horizon, n_marks=2,
        law=lambda n, h: TabulatedLaw(times * horizon, values, start=h.dmax),
        kernel=lambda n, h: kernel, max_jumps=max_jumps, markov=True,
        compensator_bound=-math.log(values[-1]), name="tabulated")
    terminal = TerminalSpec(lambda n, h: float(np.cos(n)) + 0.25 * sum(h.marks), marks_only=True)
    return model, terminal, GeneratorSpec.martingale()


def shipped_models():
    """Name -> (model, terminal, generator) for every bundled example."""
    return {
        "worked-example": worked_example(),
        "poisson": poisson(max_jumps=6),
        "uniform-tail": uniform_tail(),
        "tabulated": tabulated(),
    }


# -- intensity control -----------------------------------------------------------

def desk_control(rate=1.0, horizon=1.0, max_jumps=4, actions=(0.5, 2.0), cost_rate=0.4):
    """Poisson base, action u scales the intensity and costs cost_rate * u; reward one per jump."""
    base, _, _ = poisson(rate, horizon, max_jumps=max_jumps)
    terminal = TerminalSpec(lambda n, h: -float(min(n, max_jumps)), marks_only=True)
    return ControlModel(base, tuple(actions), r=lambda t, x, u: u + 0.0 * t,
                        l=lambda t, u: cost_rate * u + 0.0 * t, terminal=terminal,
                        C=max(actions), name="desk")
