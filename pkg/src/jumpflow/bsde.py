"""BSDEs driven by a marked point process, solved level by level.

Between jumps the solution is a deterministic function of time and of the
history so far.  Each such level function solves a backward integral equation
whose integrand involves the next level evaluated on the diagonal, so levels
are solved recursively from the jump cap downwards, lazily and memoized.
"""

from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .montecarlo import mean_se, model_source, segment_integrals, simulate_batch
from .mpp import History, KilledLaw, NoJumpLaw, Path
from .quadrature import HazardRule, level_grid

TOL_PICARD = 1e-10
MAX_ITERS = 200
N_GRID = 2000


class PicardError(RuntimeError):
    """Fixed-point iteration for a level function did not converge."""


class SpecError(ValueError):
    """Terminal or generator data is missing or invalid for a needed history."""


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TerminalSpec:
    """Terminal value u(level, history).  ``marks_only`` declares no dependence on jump times."""

    func: Callable
    marks_only: bool = False

    def __call__(self, level, history):
        if history.dmax == math.inf:
            return 0.0
        value = float(self.func(level, history))
        if not math.isfinite(value):
            raise SpecError(f"terminal value is not finite at level {level}")
        return value


@dataclass(frozen=True)
class GeneratorSpec:
    """Driver of the equation.

    kind "I":  func(t, x, y, z) is evaluated on arrays t (G,1), x (1,K), y (G,1),
    z (G,K) and averaged over marks with the kernel.
    kind "II": func(t, y, eta) with eta = eta_fn(t, zeta, weights), by default
    the kernel average of zeta.
    ``L`` and ``L_prime`` are Lipschitz constants in z (or eta) and in y.
    With ``history_dependent`` the callables also receive ``level`` and ``history``.
    """

    kind: str
    func: Callable
    L: float = 0.0
    L_prime: float = 0.0
    eta: Callable | None = None
    history_dependent: bool = False
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        if self.kind not in ("I", "II"):
            raise SpecError("generator kind must be 'I' or 'II'")
        if self.L < 0 or self.L_prime < 0:
            raise SpecError("Lipschitz constants must be nonnegative")

    def _call(self, fn, *args, level, history):
        if self.history_dependent:
            return fn(*args, level=level, history=history)
        return fn(*args)

    def pointwise(self, t, y, zeta, W, level=0, history=None):
        """Values f(t, x, y, zeta) per mark for kind I, shape (G, K)."""
        t = np.asarray(t, dtype=float)
        x = np.arange(W.shape[1])[None, :]
        vals = self._call(self.func, t[:, None], x, np.asarray(y)[:, None], zeta,
                          level=level, history=history)
        return np.broadcast_to(np.asarray(vals, dtype=float), W.shape)

    def integrand(self, t, y, zeta, W, level=0, history=None):
        """Kernel-averaged driver on a grid: returns F with y' = -F a'."""
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "I":
            vals = self.pointwise(t, y, zeta, W, level, history)
            return np.where(W > 0, W * vals, 0.0).sum(axis=1)
        if self.eta is None:
            eta = np.where(W > 0, W * zeta, 0.0).sum(axis=1)
        else:
            eta = self._call(self.eta, t, zeta, W, level=level, history=history)
        out = self._call(self.func, t, y, eta, level=level, history=history)
        return np.broadcast_to(np.asarray(out, dtype=float), t.shape).copy()

    def abs_at_zero(self, t, W, level=0, history=None):
        """Kernel average of |f(t, x, 0, 0)|."""
        t = np.asarray(t, dtype=float)
        zeros = np.zeros(len(t))
        if self.kind == "I":
            vals = self.pointwise(t, zeros, np.zeros(W.shape), W, level, history)
            return np.where(W > 0, W * np.abs(vals), 0.0).sum(axis=1)
        return np.abs(self.integrand(t, zeros, np.zeros(W.shape), W, level, history))

    @staticmethod
    def martingale():
        """f_I(t, x, y, z) = z: the solution is the conditional expectation of the terminal value."""
        return GeneratorSpec("I", lambda t, x, y, z: z, L=1.0, name="martingale")

    @staticmethod
    def zero():
        return GeneratorSpec("I", lambda t, x, y, z: np.zeros_like(z), name="zero")

    @staticmethod
    def linear(a=0.0, b=0.0, c=0.0):
        """Kind II driver a*y + b*eta + c."""
        return GeneratorSpec("II", lambda t, y, eta: a * y + b * eta + c,
                             L=abs(b), L_prime=abs(a), name="linear")


class LevelFunction:
    """y^n_D on its grid, with dense output y(t) = u + int_t^T F da."""

    def __init__(self, level, history, rule, u, F, zhat, W, iterations=0):
        self.level = level
        self.history = history
        self.rule = rule
        self.nodes = rule.nodes
        self.u = float(u)
        self.F = np.asarray(F, dtype=float)
        self._cum = rule.cumulative(self.F)
        self.values = self.u + (self._cum[-1] - self._cum)
        self.zhat = zhat
        self.W = W
        self.iterations = iterations

    @property
    def start(self):
        return float(self.nodes[0])

    @property
    def law(self):
        return self.rule.law

    @property
    def z(self):
        """Jump integrand zeta = yhat - y on the nodes, shape (G, K)."""
        return self.zhat - self.values[:, None]

    def __call__(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = self.u + self.rule.tail_at(self.F, t_arr, self._cum)
        out = np.where(t_arr <= self.start, self.values[0], out)
        return out if np.ndim(t) else float(out[0])


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

def _picard(rule, u, zhat, W, gen, level, history, tol, max_iters, init_offset):
    nodes = rule.nodes
    y = np.full(len(nodes), u + init_offset)
    for it in range(1, max_iters + 1):
        F = gen.integrand(nodes, y, zhat - y[:, None], W, level, history)
        y_new = u + rule.tail(F)
        if not np.all(np.isfinite(y_new)):
            raise PicardError(f"level {level}: non-finite iterate")
        change = float(np.max(np.abs(y_new - y)))
        y = y_new
        if change < tol:
            F = gen.integrand(nodes, y, zhat - y[:, None], W, level, history)
            return F, it
    lip = (gen.L + gen.L_prime) * float(rule.a[-1] - rule.a[0])
    raise PicardError(
        f"level {level}: no convergence in {max_iters} sweeps "
        f"(last change {change:.3g}, Lipschitz times total hazard {lip:.3g})")


def solve_interval(model, level, history, terminal_value, next_level, gen,
                   n_grid=N_GRID, tol=TOL_PICARD, max_iters=MAX_ITERS, init_offset=0.0):
    """Solve one level equation given the diagonal ``next_level(t, x)`` (vectorized in t)."""
    law = model.survival_law(level, history)
    rule = HazardRule(law, level_grid(history.dmax, model.horizon, n_grid))
    W = model.mark_kernel(level, history).weights(rule.nodes)
    zhat = np.zeros(W.shape)
    for x in range(model.n_marks):
        if np.any(W[:, x] > 0):
            zhat[:, x] = next_level(rule.nodes, x)
    F, its = _picard(rule, terminal_value, zhat, W, gen, level, history, tol, max_iters, init_offset)
    return LevelFunction(level, history, rule, terminal_value, F, zhat, W, its)


class Solver:
    """Lazy, memoized downward recursion over levels for a model with a jump cap.

    Memo keys come from ``model.memo_key``.  For Markov models one level
    function per (level, marks) is shared by all jump times and is re-solved
    from an earlier start when one is requested.
    """

    def __init__(self, model, terminal, gen, n_grid=N_GRID, tol=TOL_PICARD,
                 max_iters=MAX_ITERS, init_offset=0.0):
        if model.max_jumps is None:
            raise SpecError("the level recursion needs a finite jump cap; use solve_truncated")
        self.model = model
        self.terminal = terminal
        self.gen = gen
        self.n_grid = n_grid
        self.tol = tol
        self.max_iters = max_iters
        self.init_offset = init_offset
        self._memo = {}
        self._lock = threading.RLock()
        self._mark_terms = {}

    # -- levels --------------------------------------------------------------
    def _no_mass(self, level):
        return level >= self.model.max_jumps

    def level(self, n, history):
        key = self.model.memo_key(n, history)
        with self._lock:
            lf = self._memo.get(key)
            if lf is not None and lf.start <= history.dmax + 1e-15:
                return lf
            lf = self._solve(n, history)
            self._memo[key] = lf
            return lf

    def _solve(self, n, history):
        law = self.model.survival_law(n, history)
        u = self.terminal(n, history)
        if isinstance(law, NoJumpLaw):
            nodes = np.array([min(history.dmax, self.model.horizon), self.model.horizon])
            rule = HazardRule(law, nodes)
            K = self.model.n_marks
            return LevelFunction(n, history, rule, u, np.zeros(2), np.zeros((2, K)), np.zeros((2, K)))
        return solve_interval(self.model, n, history, u,
                              lambda ts, x: self._diagonal_nodes(n, history, ts, x), self.gen,
                              self.n_grid, self.tol, self.max_iters, self.init_offset)

    def _ext(self, history, t, x):
        t = float(t)
        return history.extend_limit(t, x) if t <= history.dmax else history.extend(t, x)

    def _terminal_ext(self, n, history, ts, x):
        if self.terminal.marks_only:
            key = (n + 1, history.marks + (x,))
            if key not in self._mark_terms:
                self._mark_terms[key] = self.terminal(n + 1, history.extend_limit(history.dmax, x))
            return np.full(len(ts), self._mark_terms[key])
        return np.array([self.terminal(n + 1, self._ext(history, t, x)) for t in ts])

    def _diagonal_nodes(self, n, history, ts, x):
        """yhat(t, x) = y^{n+1}_{D + (t, x)}(t) on the nodes of level n."""
        if self._no_mass(n + 1):
            return self._terminal_ext(n, history, ts, x)
        if self.model.markov:
            lf = self.level(n + 1, history.extend_limit(ts[0], x))
            return lf(ts)
        return np.array([self._solve(n + 1, self._ext(history, t, x)).values[0] for t in ts])

    def diagonal(self, n, history, t, x):
        """yhat(t, x) at a single time, through the memo so jumps match exactly."""
        if self._no_mass(n + 1):
            return float(self._terminal_ext(n, history, [t], x)[0])
        lf = self.level(n + 1, self._ext(history, t, x))
        return float(lf(t))

    def diagonal_many(self, n, history, ts, x):
        """yhat(t, x) for many times t >= history.dmax (vectorized for Markov models)."""
        ts = np.asarray(ts, dtype=float)
        if self._no_mass(n + 1):
            return self._terminal_ext(n, history, ts, x)
        if self.model.markov:
            return self.level(n + 1, history.extend_limit(float(ts.min()), x))(ts)
        return np.array([self.diagonal(n, history, t, x) for t in ts])

    # -- paths -----------------------------------------------------------------
    def Y0(self):
        return float(self.level(0, History()).values[0])

    def solve_path(self, path):
        if path.count > self.model.max_jumps:
            raise SpecError("path has more jumps than the model allows")
        levels = [self.level(k, path.history(k)) for k in range(path.count + 1)]
        return PathSolution(self, path, levels)


class PathSolution:
    """(Y, Z) along one path, glued from the level functions of its histories."""

    def __init__(self, solver, path, levels, shifts=None):
        self.solver = solver
        self.path = path
        self.levels = levels
        self.shifts = np.zeros(len(levels)) if shifts is None else np.asarray(shifts, dtype=float)
        self.jump_times = path.times
        self.jump_z = np.array([
            solver.diagonal(k, path.history(k), t, x) - levels[k](t)
            for k, (t, x) in enumerate(path.jumps)
        ])

    @property
    def horizon(self):
        return self.path.horizon

    def _check(self, t):
        if not 0.0 <= t <= self.horizon:
            raise ValueError(f"t={t} outside [0, {self.horizon}]")

    def active(self, t, left=False):
        side = "left" if left else "right"
        return int(np.searchsorted(self.jump_times, t, side=side))

    def Y(self, t):
        self._check(t)
        k = self.active(t)
        return self.levels[k](t) + self.shifts[k]

    def Y_left(self, t):
        self._check(t)
        k = self.active(t, left=True)
        return self.levels[k](t) + self.shifts[k]

    def Z(self, t, x=None):
        """Predictable jump integrand at time t: uses the level active just before t."""
        self._check(t)
        k = self.active(t, left=True)
        history = self.path.history(k)
        marks = range(self.solver.model.n_marks) if x is None else [x]
        base = self.levels[k](t)
        vals = np.array([self.solver.diagonal(k, history, t, m) - base for m in marks])
        return vals if x is None else float(vals[0])

    def perturbed(self, level, delta):
        """Same Z, with Y shifted by ``delta`` on the given level's segment."""
        shifts = self.shifts.copy()
        shifts[level] += delta
        out = PathSolution.__new__(PathSolution)
        out.__dict__.update(self.__dict__)
        out.shifts = shifts
        return out

    def Y0(self):
        return self.Y(0.0)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def solve_bounded(model, terminal, gen, path=None, **numerics):
    """Solve with the model's jump cap and return the solution along ``path`` (default: no jumps)."""
    solver = Solver(model, terminal, gen, **numerics)
    path = Path((), model.horizon) if path is None else path
    return solver.solve_path(path)


def extract_z(solution):
    """Z as a function (t, x) -> value along the solution's path."""
    return solution.Z


def evaluate_on_path(solution, t):
    """(Y_t, Z_t(.)) with the level active at t."""
    return solution.Y(t), solution.Z(t)


def _segment_terms(solution, k):
    """Nodes inside segment k with Y, stored Z and recomputed F on the level grid."""
    lf = solution.levels[k]
    gen = solution.solver.gen
    y = lf.values + solution.shifts[k]
    F = gen.integrand(lf.nodes, y, lf.z, lf.W, k, lf.history)
    return lf, y, F


def bsde_residual(solution):
    """sup over grid times of |Y_t + sum of jump Z in (t, T] - xi - int_t^T f dnu|."""
    path = solution.path
    T = path.horizon
    solver = solution.solver
    n = path.count
    xi = solver.terminal(n, path.history(n))
    bounds = [0.0] + list(path.times) + [T]
    # backward: integral of f from each segment end to T, and jump sums
    tail_f = 0.0
    tail_z = 0.0
    worst = 0.0
    for k in range(n, -1, -1):
        lf, y, F = _segment_terms(solution, k)
        s0, s1 = bounds[k], min(bounds[k + 1], T)
        ts = lf.nodes[(lf.nodes > s0) & (lf.nodes < s1)]
        ts = np.concatenate(([s0], ts))
        cum = lf.rule.cumulative(F)
        seg_f = lf.rule.between(F, ts, np.full(len(ts), s1), cum)
        Yt = lf(ts) + solution.shifts[k]
        res = Yt + tail_z - xi - (seg_f + tail_f)
        worst = max(worst, float(np.max(np.abs(res))))
        tail_f += float(seg_f[0])
        if k > 0:
            tail_z += float(solution.jump_z[k - 1])
    return worst


# ---------------------------------------------------------------------------
# truncation
# ---------------------------------------------------------------------------

@dataclass
class TruncationReport:
    caps: list
    Y0: list
    delta: list
    delta_se: list
    converged: bool
    warnings: list = field(default_factory=list)


def truncated_problem(model, terminal, cap):
    """Model, terminal pair localized at the n-th jump or compensator level n."""
    kill = model.compensator_bound is None or model.compensator_bound >= cap
    T = model.horizon

    def law(level, history):
        base = model.law(level, history)
        if not kill:
            return base
        remaining = cap - model.accumulated_hazard(history)
        if float(base.hazard(T)) < remaining:
            return base
        tau = float(base.inverse(math.exp(-remaining))) if remaining > 0 else history.dmax
        return KilledLaw(base, tau)

    def term(level, history):
        if level >= cap:
            return 0.0
        if kill and model.accumulated_hazard(history) + float(
                model.survival_law(level, history).hazard(T)) >= cap:
            return 0.0
        return terminal.func(level, history)

    bound = cap if model.max_jumps is None else min(cap, model.max_jumps)
    tmodel = replace(model, law=law, max_jumps=bound, markov=model.markov and not kill,
                     compensator_bound=min(cap, model.compensator_bound or cap))
    return tmodel, TerminalSpec(term, marks_only=terminal.marks_only and not kill)


def delta_proxy(model, terminal, gen, caps, n_mc, seed, alpha=None, beta=None,
                n_grid=N_GRID, sim_cap=None):
    """MC estimates of E[|xi| e^{beta A_T} alpha^{N_T} 1{T_n <= T} + tail f-term] per cap.

    All caps share one set of untruncated paths.
    """
    alpha = gen.L + 1.0 if alpha is None else alpha
    beta = 2.0 + alpha + gen.L_prime if beta is None else beta
    cap_sim = sim_cap or max(caps) + 40
    batch = simulate_batch(model, n_mc, seed, kind="truncation", cap=cap_sim)
    N, A_T = batch.counts, batch.comp_T
    xi = np.array([terminal.func(int(N[i]), batch.history(i, int(N[i]))) for i in range(len(batch))])
    weight = np.abs(xi) * np.exp(beta * A_T) * alpha ** N.astype(float)
    f0 = model_source(model, lambda k, h, ts, w: gen.abs_at_zero(ts, w, k, h), n_grid)
    out, ses = [], []
    for n in caps:
        # T_n: n-th jump, or first time the compensator reaches n
        Tn = np.where(N >= n, batch.jump_start(n) if n <= batch.width else np.inf, np.inf)
        hit = (A_T >= n) | (N >= n)
        vals = np.where(hit, weight, 0.0)
        if gen.kind == "I" or gen.eta is None:
            lower = np.where(hit, np.minimum(Tn, _compensator_time(model, batch, n)), np.inf)
            if np.any(np.isfinite(lower)):
                vals = vals + segment_integrals(model, batch, f0, beta, alpha, lower=lower)
        m, se = mean_se(vals)
        out.append(m)
        ses.append(se)
    return out, ses, batch


def _compensator_time(model, batch, n):
    """First time A reaches n along each path (inf if never before T)."""
    out = np.full(len(batch), np.inf)
    for i in np.flatnonzero(batch.comp_T >= n):
        k = int(np.searchsorted(batch.comp[i, :batch.counts[i] + 1], n))
        k = max(k - 1, 0)
        h = batch.history(i, k)
        law = model.survival_law(k, h)
        out[i] = float(law.inverse(math.exp(-(n - batch.comp[i, k]))))
    return out


def solve_truncated(model, terminal, gen, caps, mc_budget=100_000, seed=0, tail_tol=None,
                    **numerics):
    """Solve the localized problems for increasing caps and estimate the tail proxy."""
    caps = list(caps)
    if any(b <= a for a, b in zip(caps, caps[1:])):
        raise ValueError("caps must be increasing")
    Y0s = []
    for n in caps:
        tmodel, tterm = truncated_problem(model, terminal, n)
        Y0s.append(Solver(tmodel, tterm, gen, **numerics).Y0())
    delta, delta_se, _ = delta_proxy(model, terminal, gen, caps, mc_budget, seed,
                                     n_grid=numerics.get("n_grid", N_GRID))
    notes = []
    converged = tail_tol is None or delta[-1] < tail_tol
    if not converged:
        msg = f"tail proxy {delta[-1]:.3g} above tolerance {tail_tol:.3g} at cap {caps[-1]}"
        warnings.warn(msg)
        notes.append(msg)
    return TruncationReport(caps, Y0s, delta, delta_se, converged, notes)


def uniqueness_gap(model, terminal, gen, paths=(), **numerics):
    """Sup distance between level functions from Picard runs started at u and at u + 1."""
    runs = [Solver(model, terminal, gen, init_offset=off, **numerics) for off in (0.0, 1.0)]
    for s in runs:
        s.Y0()
        for p in paths:
            s.solve_path(p)
    first, second = runs
    gap = 0.0
    for key, lf in first._memo.items():
        other = second._memo.get(key)
        if other is None:
            continue
        ts = lf.nodes[lf.nodes >= other.start]
        gap = max(gap, float(np.max(np.abs(lf(ts) - other(ts)))) if len(ts) else 0.0)
    return gap
