"""Intensity control: Hamiltonian driver, feedback policy, change of measure and cost estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bsde import GeneratorSpec, Solver
from .montecarlo import (PathBatch, _groups, mean_se, model_source, segment_integrals,
                         simulate_batch, stream)
from .mpp import BEYOND, DELTA, History, NoJumpLaw, _draw_mark


@dataclass(frozen=True)
class ControlModel:
    """Base point process, finite action values, intensity factor r(t, x, u) in [0, C],
    running cost l(t, u) and terminal cost.  ``jump_cost`` c(t, x, u) adds the
    running cost sum_x c r phi (a cost paid at each jump)."""

    base: object
    actions: tuple
    r: Callable
    l: Callable
    terminal: object
    C: float
    jump_cost: Callable | None = None
    name: str = field(default="control", compare=False)

    def __post_init__(self):
        if len(self.actions) == 0:
            raise ValueError("action set is empty")
        ts = np.linspace(0.0, self.base.horizon, 101)
        for u in self.actions:
            r = np.broadcast_to(self.r(ts[:, None], np.arange(self.base.n_marks)[None, :], u),
                                (len(ts), self.base.n_marks))
            if np.any(r < 0) or np.any(r > self.C + 1e-12):
                raise ValueError(f"intensity factor outside [0, C] for action {u}")

    @property
    def n_actions(self):
        return len(self.actions)

    def _r(self, t, u, K):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.asarray(self.r(t[:, None], np.arange(K)[None, :], u), dtype=float),
                               (len(t), K))

    def running(self, t, u, W):
        """l(t, u) plus the jump-cost term, for one action value."""
        t = np.asarray(t, dtype=float)
        out = np.broadcast_to(np.asarray(self.l(t, u), dtype=float), t.shape).astype(float)
        if self.jump_cost is not None:
            K = W.shape[1]
            c = np.broadcast_to(self.jump_cost(t[:, None], np.arange(K)[None, :], u), W.shape)
            out = out + np.where(W > 0, W * c * self._r(t, u, K), 0.0).sum(axis=1)
        return out

    def objective(self, t, zeta, W):
        """l(t, u) + sum_x zeta(x) r(t, x, u) phi(x) for every action: shape (G, m)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        K = W.shape[1]
        out = np.empty((len(t), self.n_actions))
        for j, u in enumerate(self.actions):
            r = self._r(t, u, K)
            out[:, j] = self.running(t, u, W) + np.where(W > 0, W * zeta * r, 0.0).sum(axis=1)
        return out

    def generator(self):
        """Hamiltonian driver f(t, zeta) = min_u objective, Lipschitz with L = C, L' = 0."""
        return GeneratorSpec("II", lambda t, y, eta: eta.min(axis=1), L=self.C,
                             eta=self.objective, name="hamiltonian")

    def policy_generator(self, policy):
        """Linear driver of a fixed policy; its solution at 0 is the policy's cost."""

        def eta(t, zeta, W, level, history):
            return self.objective(t, zeta, W)

        def func(t, y, values, level, history):
            idx = policy.actions(level, history, t)
            return values[np.arange(len(t)), idx]

        return GeneratorSpec("II", func, L=self.C, eta=eta, history_dependent=True,
                             name="policy")


def hamiltonian_min(cm, t, zeta, weights):
    """(min over actions, index of the first minimizer) at one time."""
    zeta = np.asarray(zeta, dtype=float)[None, :]
    weights = np.asarray(weights, dtype=float)[None, :]
    vals = cm.objective(np.array([float(t)]), zeta, weights)[0]
    j = int(np.argmin(vals))
    return float(vals[j]), j


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------

class Policy:
    """Maps (level, history, times) to action indices."""

    label = "policy"

    def actions(self, level, history, ts):
        raise NotImplementedError

    def __call__(self, t, history):
        return int(self.actions(history.level, history, np.array([float(t)]))[0])


class LevelPolicy(Policy):
    """One action per jump count, constant in time."""

    def __init__(self, per_level, label=None):
        self.per_level = tuple(int(j) for j in per_level)
        self.label = label or "level-" + "".join(map(str, self.per_level))

    def actions(self, level, history, ts):
        j = self.per_level[min(level, len(self.per_level) - 1)]
        return np.full(len(np.atleast_1d(ts)), j, dtype=int)


class FeedbackPolicy(Policy):
    """Minimizer of the Hamiltonian at the solved jump integrand."""

    label = "optimal"

    def __init__(self, cm, solver):
        self.cm = cm
        self.solver = solver

    def actions(self, level, history, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        model = self.solver.model
        if model.survival_law(level, history).__class__ is NoJumpLaw:
            W = model.mark_kernel(level, history).weights(ts)
            return np.argmin(self.cm.objective(ts, np.zeros(W.shape), W), axis=1)
        lf = self.solver.level(level, history)
        W = model.mark_kernel(level, history).weights(ts)
        y = lf(ts)
        zeta = np.zeros(W.shape)
        for x in range(model.n_marks):
            if np.any(W[:, x] > 0):
                zeta[:, x] = self.solver.diagonal_many(level, history, ts, x) - y
        return np.argmin(self.cm.objective(ts, zeta, W), axis=1)


def synthesize_policy(cm, solver):
    return FeedbackPolicy(cm, solver)


# ---------------------------------------------------------------------------
# change of measure and costs
# ---------------------------------------------------------------------------

def _jump_groups(model, batch):
    """Yield (k, path indices, representative history) for the (k+1)-th jumps."""
    for k in range(batch.width):
        have = np.flatnonzero(batch.counts > k)
        if len(have) == 0:
            continue
        groups = _groups(batch.marks[have, :k]) if model.markov else [np.array([j]) for j in range(len(have))]
        for grp in groups:
            idx = have[grp]
            starts = batch.jump_start(k)[idx]
            i0 = idx[np.argmin(starts)]
            yield k, idx, batch.history(i0, k)


def log_weights(cm, policy, batch, n_grid=2000):
    """log L^u_T per path (-inf where r vanishes at a realized jump)."""
    model = cm.base
    K = model.n_marks

    def drift(k, h, ts, W):
        idx = policy.actions(k, h, ts)
        r = np.stack([cm._r(ts, u, K) for u in cm.actions])  # (m, G, K)
        rr = r[idx, np.arange(len(ts))]
        return 1.0 - np.where(W > 0, W * rr, 0.0).sum(axis=1)

    logL = segment_integrals(model, batch, model_source(model, drift, n_grid))
    for k, idx, rep in _jump_groups(model, batch):
        ts, xs = batch.times[idx, k], batch.marks[idx, k]
        acts = policy.actions(k, rep, ts)
        rv = np.empty(len(idx))
        for j, u in enumerate(cm.actions):
            sel = acts == j
            if np.any(sel):
                rv[sel] = np.broadcast_to(cm.r(ts[sel], xs[sel], u), sel.sum())
        with np.errstate(divide="ignore"):
            logL[idx] += np.log(rv)
    return logL


def girsanov_weight(cm, policy, path):
    """L^u_T for a single path."""
    batch = _single(cm.base, path)
    return float(np.exp(log_weights(cm, policy, batch)[0]))


def _single(model, path):
    n = path.count
    times = np.array([[t for t, _ in path.jumps]]).reshape(1, n)
    marks = np.array([[x for _, x in path.jumps]], dtype=int).reshape(1, n)
    comp = np.zeros((1, n + 1))
    h = History()
    for k, (t, x) in enumerate(path.jumps):
        law = model.survival_law(k, h)
        comp[0, k + 1] = comp[0, k] + float(law.hazard(t))
        h = h.extend(t, x)
    comp_T = comp[0, n] + float(model.survival_law(n, h).hazard(model.horizon))
    return PathBatch(times, marks, np.array([n]), comp, np.array([comp_T]),
                     np.array([path.truncated]), model.horizon)


def running_costs(cm, policy, batch, n_grid=2000):
    """int_0^T l(t, u_t) dA_t per path."""
    model = cm.base

    def cost(k, h, ts, W):
        idx = policy.actions(k, h, ts)
        vals = np.stack([cm.running(ts, u, W) for u in cm.actions])
        return vals[idx, np.arange(len(ts))]

    return segment_integrals(model, batch, model_source(model, cost, n_grid))


def terminal_costs(cm, batch):
    return np.array([cm.terminal(int(batch.counts[i]), batch.history(i, int(batch.counts[i])))
                     for i in range(len(batch))])


@dataclass
class CostEstimate:
    J: float
    se: float
    mean_weight: float
    weight_se: float
    zero_weights: int


def cost_estimate(cm, policy, n_mc, seed, batch=None, n_grid=2000):
    """J(u) = E[L^u_T (int l dA + xi)] under the base measure, with standard error."""
    batch = simulate_batch(cm.base, n_mc, seed, kind="control") if batch is None else batch
    logL = log_weights(cm, policy, batch, n_grid)
    if np.any(logL > 700):
        raise OverflowError("likelihood weights overflow; use a smaller C or horizon")
    L = np.exp(logL)
    J, se = mean_se(L * (running_costs(cm, policy, batch, n_grid) + terminal_costs(cm, batch)))
    mw, mse = mean_se(L)
    return CostEstimate(J, se, mw, mse, int(np.sum(L == 0)))


def simulate_controlled(cm, policy, n, seed, chunk=1000):
    """Paths under the controlled law by thinning candidates of intensity C times the base hazard."""
    model = cm.base
    T = model.horizon
    cap = model.max_jumps if model.max_jumps is not None else 1000
    C = cm.C
    K = model.n_marks
    parts = []
    for c, c0 in enumerate(range(0, n, chunk)):
        m = min(chunk, n - c0)
        rng = stream(seed, "controlled", c)
        times = np.full((m, cap), BEYOND)
        marks = np.full((m, cap), DELTA, dtype=int)
        comp = np.full((m, cap + 1), np.nan)
        comp[:, 0] = 0.0
        comp_T = np.zeros(m)
        counts = np.zeros(m, dtype=int)
        for i in range(m):
            h = History()
            A = 0.0
            for k in range(cap + 1):
                law = model.survival_law(k, h)
                aT = float(law.hazard(T))
                if k == cap or isinstance(law, NoJumpLaw) or C == 0:
                    comp_T[i] = A + aT
                    break
                a_cur = 0.0
                while True:
                    a_cur += rng.exponential() / C
                    if a_cur > aT:
                        s = BEYOND
                        break
                    s = float(law.inverse(math.exp(-a_cur)))
                    W = model.mark_kernel(k, h).weights(s)
                    u = cm.actions[policy.actions(k, h, np.array([s]))[0]]
                    rw = W[0] * cm._r(np.array([s]), u, K)[0]
                    if rng.random() * C < rw.sum():
                        x = int(_draw_mark(rw / rw.sum(), rng.random()))
                        break
                if math.isinf(s):
                    comp_T[i] = A + aT
                    break
                A += a_cur
                times[i, k], marks[i, k], comp[i, k + 1] = s, x, A
                counts[i] = k + 1
                h = h.extend(s, x)
        parts.append(PathBatch(times, marks, counts, comp, comp_T, np.zeros(m, dtype=bool), T))
    batch = PathBatch.concat(parts, T)
    width = int(batch.counts.max()) if len(batch) else 0
    batch.times, batch.marks, batch.comp = batch.times[:, :width], batch.marks[:, :width], batch.comp[:, :width + 1]
    return batch


def direct_cost(cm, policy, n, seed):
    """J(u) from paths simulated under the controlled law (no weights)."""
    batch = simulate_controlled(cm, policy, n, seed)
    return mean_se(running_costs(cm, policy, batch) + terminal_costs(cm, batch))


# ---------------------------------------------------------------------------
# optimality
# ---------------------------------------------------------------------------

@dataclass
class Finding:
    check: str
    passed: bool
    detail: str


@dataclass
class ControlReport:
    Y0: float
    rows: list
    findings: list
    exhaustive: dict

    @property
    def passed(self):
        return all(f.passed for f in self.findings)


def exhaustive_level_costs(cm, solver_kwargs=None):
    """Exact cost of every level-constant policy by solving its linear equation."""
    solver_kwargs = solver_kwargs or {}
    levels = cm.base.max_jumps
    if levels is None:
        raise ValueError("exhaustive search needs a jump cap")
    out = {}
    for code in np.ndindex(*([cm.n_actions] * max(levels, 1))):
        pol = LevelPolicy(code)
        out[pol.label] = Solver(cm.base, cm.terminal, cm.policy_generator(pol), **solver_kwargs).Y0()
    return out


def optimality_check(cm, n_mc, n_random, seed, exhaustive=True, n_grid=2000):
    """Compare Y_0 with the estimated costs of the feedback policy and of random level policies."""
    solver = Solver(cm.base, cm.terminal, cm.generator(), n_grid=n_grid)
    Y0 = solver.Y0()
    batch = simulate_batch(cm.base, n_mc, seed, kind="control")
    opt = FeedbackPolicy(cm, solver)
    est = cost_estimate(cm, opt, n_mc, seed, batch, n_grid)
    rows = [dict(policy_id="optimal", J_hat=est.J, se=est.se, Y0=Y0, mean_weight=est.mean_weight,
                 weight_se=est.weight_se)]
    findings = [
        Finding("optimal_cost_matches_Y0", abs(Y0 - est.J) <= 3 * est.se,
                f"|Y0 - J(u*)| = {abs(Y0 - est.J):.4g}, 3se = {3 * est.se:.4g}"),
        Finding("mean_weight_is_one", abs(est.mean_weight - 1.0) <= 3 * est.weight_se,
                f"E[L] = {est.mean_weight:.5f} +- {est.weight_se:.5f}"),
    ]
    rng = stream(seed, "policies")
    levels = max(cm.base.max_jumps or 1, 1)
    for k in range(n_random):
        pol = LevelPolicy(rng.integers(cm.n_actions, size=levels), label=f"random-{k}")
        e = cost_estimate(cm, pol, n_mc, seed, batch, n_grid)
        rows.append(dict(policy_id=pol.label, J_hat=e.J, se=e.se, Y0=Y0, mean_weight=e.mean_weight,
                         weight_se=e.weight_se))
        findings.append(Finding(f"{pol.label}_not_better", e.J >= Y0 - 3 * e.se,
                                f"J = {e.J:.5f}, Y0 - 3se = {Y0 - 3 * e.se:.5f}"))
    table = {}
    if exhaustive:
        table = exhaustive_level_costs(cm, dict(n_grid=n_grid))
        best = min(table.values())
        findings.append(Finding("Y0_below_all_level_policies", Y0 <= best + 1e-9,
                                f"Y0 = {Y0:.6f}, best level policy = {best:.6f}"))
    return ControlReport(Y0, rows, findings, table)
