"""Weighted norms and numerical checks of the a priori estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bsde import Solver
from .montecarlo import mean_se, segment_integrals, simulate_batch


@dataclass(frozen=True)
class NormParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not self.alpha > 0 or self.beta < 0:
            raise ValueError("need alpha > 0 and beta >= 0")

    def require_admissible(self, gen):
        if not (self.alpha > gen.L and self.beta > 1.0 + self.alpha + gen.L_prime):
            raise ValueError(
                f"bound checks need alpha > L={gen.L} and beta > 1 + alpha + L'="
                f"{1.0 + self.alpha + gen.L_prime}")


@dataclass
class CheckResult:
    check: str
    lhs: float
    rhs: float
    se: float
    passed: bool

    @property
    def slack(self):
        return self.rhs - self.lhs


def _terminal_values(terminal, batch, fn=None):
    fn = fn or terminal
    return np.array([fn(int(batch.counts[i]), batch.history(i, int(batch.counts[i])))
                     for i in range(len(batch))])


def _growth(batch, params):
    return np.exp(params.beta * batch.comp_T) * params.alpha ** batch.counts.astype(float)


def solution_source(solver, fields=None):
    """Segment source with nodal |Y| + sum_x phi |Z| from the solver's level functions."""

    def source(level, history):
        lf = solver.level(level, history)
        y, z = (lf.values, lf.z) if fields is None else fields(lf)
        vals = np.abs(y) + np.where(lf.W > 0, lf.W * np.abs(z), 0.0).sum(axis=1)
        return lf.rule, vals

    return source


def weighted_norm(solver, params, n_mc, seed, fields=None, batch=None):
    """MC estimate of E int int (|Y| + |Z|) e^{beta A} alpha^N dnu, with standard error.

    ``fields(lf)`` may replace the solved (Y, Z) on the nodes of each level function.
    """
    batch = simulate_batch(solver.model, n_mc, seed, kind="norm") if batch is None else batch
    per_path = segment_integrals(solver.model, batch, solution_source(solver, fields),
                                 params.beta, params.alpha)
    return mean_se(per_path)


def _f0_source(solver):
    def source(level, history):
        lf = solver.level(level, history)
        return lf.rule, solver.gen.abs_at_zero(lf.nodes, lf.W, level, lf.history)
    return source


def apriori_bound_check(solver, params, n_mc, seed, batch=None):
    """|Y_0| <= E[|xi| e^{beta A_T} alpha^{N_T} + int int |f(s,x,0,0)| e^{beta A} alpha^N dnu]."""
    params.require_admissible(solver.gen)
    batch = simulate_batch(solver.model, n_mc, seed, kind="apriori") if batch is None else batch
    xi = _terminal_values(solver.terminal, batch)
    vals = np.abs(xi) * _growth(batch, params)
    vals = vals + segment_integrals(solver.model, batch, _f0_source(solver), params.beta, params.alpha)
    rhs, se = mean_se(vals)
    lhs = abs(solver.Y0())
    return CheckResult("apriori", lhs, rhs, se, rhs - lhs >= -3.0 * se)


def deterministic_bound_check(solver, level=0, history=None, rho=None, tol=1e-9):
    """Single-level bound |y(t)| e^{rho a(t)} <= |u| e^{rho a(T)} + int_t^T (|f0| + L|yhat|) e^{rho a} da.

    Checked on every node of the level grid; returns the worst (lhs - rhs) as ``lhs``
    with ``rhs`` = 0.
    """
    from .mpp import History
    history = History() if history is None else history
    gen = solver.gen
    rho = gen.L + gen.L_prime if rho is None else rho
    if rho < gen.L + gen.L_prime:
        raise ValueError("rho must be at least L + L'")
    lf = solver.level(level, history)
    a = lf.rule.a - lf.rule.a[0]
    weight = np.exp(rho * a)
    lhs = np.abs(lf.values) * weight
    g = gen.abs_at_zero(lf.nodes, lf.W, level, lf.history)
    g = g + gen.L * np.where(lf.W > 0, lf.W * np.abs(lf.zhat), 0.0).sum(axis=1)
    rhs = abs(lf.u) * weight[-1] + lf.rule.tail(g * weight)
    worst = float(np.max(lhs - rhs))
    return CheckResult("deterministic", worst, 0.0, 0.0, worst <= tol)


def stability_check(model, terminal, terminal2, gen, params, n_mc, seed, batch=None, **numerics):
    """|Y'_0 - Y_0| <= E[|xi' - xi| e^{beta A_T} alpha^{N_T}]."""
    params.require_admissible(gen)
    y0 = Solver(model, terminal, gen, **numerics).Y0()
    y1 = Solver(model, terminal2, gen, **numerics).Y0()
    batch = simulate_batch(model, n_mc, seed, kind="stability") if batch is None else batch
    diff = _terminal_values(terminal2, batch) - _terminal_values(terminal, batch)
    rhs, se = mean_se(np.abs(diff) * _growth(batch, params))
    lhs = abs(y1 - y0)
    return CheckResult("stability", lhs, rhs, se, lhs <= rhs + 3.0 * se)


def _nodal_sign(y):
    """sign(y), with isolated zeros taking the sign of a neighbouring node.

    The zero set of Y is null for the compensator, so nodes where Y vanishes
    carry the limiting sign; this keeps the integrand continuous for quadrature.
    """
    s = np.sign(y)
    zero = np.flatnonzero(s == 0)
    for i in zero:
        left = s[:i][s[:i] != 0]
        right = s[i + 1:][s[i + 1:] != 0]
        s[i] = left[-1] if len(left) else (right[0] if len(right) else 0.0)
    return s


def identity_p1_check(solution, params):
    """Largest gap between the two sides of the pathwise |Y| identity over the path's grid times.

    Left:  |Y_t| w_t + sum_{S_n in (t,T]} (alpha |Y_{S_n}| - |Y_{S_n-}|) e^{beta A_{S_n}} alpha^{n-1}
           + beta int_t^T |Y| w dA
    Right: |xi| w_T + int_t^T sign(Y) f w dA,     with w = e^{beta A} alpha^N.
    """
    alpha, beta = params.alpha, params.beta
    path = solution.path
    T = path.horizon
    n = path.count
    levels = solution.levels
    bounds = [0.0] + list(path.times) + [T]
    # compensator at each jump time along the path
    A = [0.0]
    for k in range(n):
        law = levels[k].law
        A.append(A[-1] + float(law.hazard(bounds[k + 1]) - law.hazard(bounds[k])))
    lawN = levels[n].law
    A_T = A[n] + float(lawN.hazard(T) - lawN.hazard(bounds[n]))
    xi = solution.solver.terminal(n, path.history(n))
    right_tail = abs(xi) * math.exp(beta * A_T) * alpha ** n
    left_tail = 0.0
    worst = 0.0
    for k in range(n, -1, -1):
        lf = levels[k]
        rule = lf.rule
        s0, s1 = bounds[k], bounds[k + 1]
        y = lf.values
        F = solution.solver.gen.integrand(lf.nodes, y, lf.z, lf.W, k, lf.history)
        w = np.exp(beta * (A[k] + rule.a - float(rule.law.hazard(s0)))) * alpha ** k
        left_int = beta * np.abs(y) * w
        right_int = _nodal_sign(y) * F * w
        ts = np.concatenate(([s0], lf.nodes[(lf.nodes > s0) & (lf.nodes < s1)]))
        end = np.full(len(ts), min(s1, T))
        L_seg = rule.between(left_int, ts, end)
        R_seg = rule.between(right_int, ts, end)
        wt = np.exp(beta * (A[k] + rule.law.hazard(ts) - rule.law.hazard(s0))) * alpha ** k
        lhs = np.abs(lf(ts)) * wt + left_tail + L_seg
        rhs = right_tail + R_seg
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        left_tail += float(L_seg[0])
        right_tail += float(R_seg[0])
        if k > 0:
            before, after = levels[k - 1](s0), lf(s0)
            left_tail += (alpha * abs(after) - abs(before)) * math.exp(beta * A[k]) * alpha ** (k - 1)
    return worst
