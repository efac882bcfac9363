"""Marked point processes given by conditional survival laws and mark kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .quadrature import HazardRule

DELTA = -1  # the distinguished mark carried by points beyond the horizon
BEYOND = math.inf


class ModelError(ValueError):
    """A survival law or kernel violates the model assumptions."""


# ---------------------------------------------------------------------------
# histories and paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class History:
    """Jump times and marks observed so far; the implicit first entry is (0, DELTA)."""

    entries: tuple = ()

    def __post_init__(self):
        entries = tuple((float(t), int(x)) for t, x in self.entries)
        object.__setattr__(self, "entries", entries)
        prev = 0.0
        for t, x in entries:
            if math.isinf(t):
                if x != DELTA:
                    raise ValueError("a point beyond the horizon carries the mark DELTA")
            elif not t > prev:
                raise ValueError(f"jump times must be strictly increasing and positive, got {t} after {prev}")
            elif x < 0:
                raise ValueError(f"invalid mark id {x}")
            prev = t

    @classmethod
    def _limit(cls, entries):
        """History whose last jump may coincide with the previous one (right limits)."""
        h = object.__new__(cls)
        object.__setattr__(h, "entries", tuple(entries))
        return h

    @property
    def level(self):
        return len(self.entries)

    @property
    def dmax(self):
        return self.entries[-1][0] if self.entries else 0.0

    @property
    def marks(self):
        return tuple(x for _, x in self.entries)

    @property
    def times(self):
        return tuple(t for t, _ in self.entries)

    def extend(self, t, x):
        return History(self.entries + ((t, x),))

    def extend_limit(self, t, x):
        return History._limit(self.entries + ((float(t), int(x)),))

    def prefix(self, n):
        return History._limit(self.entries[:n])


@dataclass(frozen=True)
class Path:
    """A realized sequence of jumps on [0, horizon]."""

    jumps: tuple
    horizon: float
    truncated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "jumps", tuple((float(t), int(x)) for t, x in self.jumps))
        History(self.jumps)
        if any(t > self.horizon for t, _ in self.jumps):
            raise ValueError("path jumps must lie in [0, horizon]")

    @property
    def count(self):
        return len(self.jumps)

    @property
    def times(self):
        return np.array([t for t, _ in self.jumps])

    def history(self, n=None):
        n = self.count if n is None else n
        return History._limit(self.jumps[:n])


# ---------------------------------------------------------------------------
# survival laws
# ---------------------------------------------------------------------------

class SurvivalLaw:
    """Conditional survival g(t) = P(next jump > t | history) for t >= start.

    Subclasses implement ``survival``; ``hazard`` is -log g.  ``smooth`` laws
    also provide the hazard ``rate`` and are integrated with the cubic rule.
    """

    smooth = False

    def __init__(self, start):
        self.start = float(start)

    def survival(self, t):
        raise NotImplementedError

    def hazard(self, t):
        with np.errstate(divide="ignore"):
            return -np.log(self.survival(t))

    def inverse(self, v):
        """Time t with g(t) = v, for v in (g(T), 1]."""
        raise NotImplementedError

    def validate(self, horizon, n_check=257):
        ts = np.linspace(self.start, horizon, n_check)
        g = np.asarray(self.survival(ts), dtype=float)
        if abs(g[0] - 1.0) > 1e-12:
            raise ModelError(f"survival at the last jump time must be 1, got {g[0]}")
        if np.any(np.diff(g) > 1e-12):
            raise ModelError("survival function must be nonincreasing")
        if not g[-1] > 0:
            raise ModelError("survival at the horizon must be positive")
        return self


class NoJumpLaw(SurvivalLaw):
    smooth = True

    def survival(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def hazard(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def rate(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def inverse(self, v):
        return np.full_like(np.asarray(v, dtype=float), BEYOND)


class ExponentialLaw(SurvivalLaw):
    """Constant hazard rate after ``start``."""

    smooth = True

    def __init__(self, rate, start=0.0):
        super().__init__(start)
        if rate < 0:
            raise ModelError("rate must be nonnegative")
        self.lam = float(rate)

    def survival(self, t):
        return np.exp(-self.hazard(t))

    def hazard(self, t):
        return self.lam * (np.asarray(t, dtype=float) - self.start)

    def rate(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.lam)

    def inverse(self, v):
        return self.start - np.log(v) / self.lam


class UniformTailLaw(SurvivalLaw):
    """g(t) = (v - t) / (v - start): a uniform law on [start, v] seen before v."""

    smooth = True

    def __init__(self, v, start=0.0):
        super().__init__(start)
        if not v > start:
            raise ModelError("uniform-tail endpoint must exceed the start time")
        self.v = float(v)

    def survival(self, t):
        return (self.v - np.asarray(t, dtype=float)) / (self.v - self.start)

    def rate(self, t):
        return 1.0 / (self.v - np.asarray(t, dtype=float))

    def inverse(self, v):
        return self.v - np.asarray(v, dtype=float) * (self.v - self.start)


class TabulatedLaw(SurvivalLaw):
    """Piecewise-linear base survival G, conditioned on no jump before ``start``.

    ``times``/``values`` tabulate an absolute-time survival G with G(times[0]) = 1;
    the law is g(t) = G(t) / G(start).
    """

    def __init__(self, times, values, start=0.0):
        super().__init__(start)
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.values.shape or len(self.times) < 2:
            raise ModelError("tabulated law needs matching 1-d arrays of length >= 2")
        if np.any(np.diff(self.times) <= 0) or np.any(np.diff(self.values) > 0):
            raise ModelError("tabulated times must increase and values must not increase")
        if self.values[0] != 1.0 or self.values[-1] <= 0:
            raise ModelError("tabulated survival must start at 1 and stay positive")
        if not self.times[0] <= self.start <= self.times[-1]:
            raise ModelError("start time outside the table")
        self._g0 = float(np.interp(self.start, self.times, self.values))

    def survival(self, t):
        return np.interp(np.asarray(t, dtype=float), self.times, self.values) / self._g0

    def inverse(self, v):
        target = np.asarray(v, dtype=float) * self._g0
        # values are nonincreasing; interpolate on the reversed table
        return np.interp(target, self.values[::-1], self.times[::-1])


class KilledLaw(SurvivalLaw):
    """A law whose hazard is frozen from time ``tau`` on (no jumps after tau)."""

    def __init__(self, base, tau):
        super().__init__(base.start)
        self.base = base
        self.tau = float(tau)

    def survival(self, t):
        return self.base.survival(np.minimum(np.asarray(t, dtype=float), self.tau))

    def hazard(self, t):
        return self.base.hazard(np.minimum(np.asarray(t, dtype=float), self.tau))

    def inverse(self, v):
        v = np.asarray(v, dtype=float)
        g_tau = self.base.survival(self.tau)
        return np.where(v < g_tau, BEYOND, self.base.inverse(np.maximum(v, g_tau)))


# ---------------------------------------------------------------------------
# mark kernels
# ---------------------------------------------------------------------------

class MarkKernel:
    """Probability weights over the finite mark alphabet, possibly time dependent."""

    def __init__(self, weights=None, fn=None):
        if (weights is None) == (fn is None):
            raise ValueError("give either fixed weights or a function of time")
        self.fixed = None if weights is None else np.asarray(weights, dtype=float)
        self.fn = fn
        if self.fixed is not None:
            _check_weights(self.fixed[None, :])

    def weights(self, times):
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if self.fixed is not None:
            return np.broadcast_to(self.fixed, (len(times), len(self.fixed))).copy()
        w = np.asarray(self.fn(times), dtype=float)
        _check_weights(w)
        return w


def _check_weights(w):
    if np.any(w < -1e-15) or np.any(np.abs(w.sum(axis=-1) - 1.0) > 1e-9):
        raise ModelError("mark kernel weights must be nonnegative and sum to one")


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MppModel:
    """A nonexplosive marked point process on [0, horizon].

    ``law(level, history)`` returns the survival law of the next jump time and
    ``kernel(level, history)`` the mark kernel.  ``max_jumps`` bounds the number
    of points (None for unbounded).  ``markov=True`` declares that laws, kernels
    and hazard rates depend on the history only through its level and marks,
    with hazard rates in absolute time; the solver then shares level functions
    across jump times.  ``compensator_bound`` is an a priori bound on A_T.
    """

    horizon: float
    n_marks: int
    law: Callable
    kernel: Callable
    max_jumps: int | None = None
    markov: bool = False
    compensator_bound: float | None = None
    name: str = field(default="model", compare=False)

    def survival_law(self, level, history):
        if history.dmax > self.horizon or (self.max_jumps is not None and level >= self.max_jumps):
            return NoJumpLaw(min(history.dmax, self.horizon))
        law = self.law(level, history)
        if abs(law.start - history.dmax) > 1e-12:
            raise ModelError(f"law starts at {law.start}, history at {history.dmax}")
        return law

    def mark_kernel(self, level, history):
        return self.kernel(level, history)

    def memo_key(self, level, history):
        if self.markov:
            return (level, history.marks)
        return (level, history.entries)

    def accumulated_hazard(self, history):
        """Compensator A at the last jump time of ``history``."""
        total = 0.0
        for k in range(history.level):
            t = history.entries[k][0]
            total += float(self.survival_law(k, history.prefix(k)).hazard(min(t, self.horizon)))
        return total


def survival_and_hazard(model, level, history, t):
    """Return (g(t), a(t)) for the next-jump law after ``history``."""
    if not history.dmax - 1e-12 <= t <= model.horizon + 1e-12:
        raise ValueError(f"t={t} outside [{history.dmax}, {model.horizon}]")
    law = model.survival_law(level, history)
    g = float(law.survival(t))
    if not g > 0:
        raise ModelError(f"survival vanished at t={t} before the horizon")
    return g, float(-math.log(g))


def _draw_mark(weights, w):
    cdf = np.cumsum(weights, axis=-1)
    cdf[..., -1] = 1.0
    return (cdf <= np.asarray(w)[..., None]).sum(axis=-1)


def sample_next(model, level, history, rng=None, uniforms=None):
    """Draw the next (time, mark) by inverse survival; beyond the horizon gives (inf, DELTA)."""
    if uniforms is None:
        v, w = rng.random(), rng.random()
    else:
        v, w = uniforms
    law = model.survival_law(level, history)
    if v < float(law.survival(model.horizon)) or v == 0.0:
        return BEYOND, DELTA
    s = float(law.inverse(v))
    if not s <= model.horizon:
        return BEYOND, DELTA
    s = max(s, np.nextafter(history.dmax, math.inf))
    weights = model.mark_kernel(level, history).weights(s)[0]
    return s, int(_draw_mark(weights, w))


def simulate_path(model, rng, cap=None):
    """Chain ``sample_next`` until beyond the horizon, the model bound or ``cap``."""
    jumps = []
    history = History()
    limit = cap if cap is not None else math.inf
    while True:
        level = len(jumps)
        if model.max_jumps is not None and level >= model.max_jumps:
            return Path(jumps, model.horizon)
        if level >= limit:
            return Path(jumps, model.horizon, truncated=True)
        t, x = sample_next(model, level, history, rng)
        if math.isinf(t):
            return Path(jumps, model.horizon)
        jumps.append((t, x))
        history = history.extend(t, x)


def integrate_kernel(model, level, history, h, t0, t1, n_grid=2000):
    """Integral of h(s, x) over [t0, t1] x E against the level compensator."""
    if not history.dmax - 1e-12 <= t0 <= t1 <= model.horizon + 1e-12:
        raise ValueError("need dmax <= t0 <= t1 <= horizon")
    law = model.survival_law(level, history)
    nodes = np.linspace(t0, t1, n_grid) if t1 > t0 else np.array([t0, t1])
    rule = HazardRule(law, nodes)
    w = model.mark_kernel(level, history).weights(nodes)
    marks = np.arange(model.n_marks)
    vals = np.asarray(h(nodes[:, None], marks[None, :]), dtype=float) * np.ones_like(w)
    if not np.all(np.isfinite(vals[w > 0])):
        raise ValueError("integrand is not finite on the grid")
    F = np.where(w > 0, vals * w, 0.0).sum(axis=1)
    return float(rule.interval_integrals(F).sum())


def sample_next_batch(model, level, history, rng, n):
    """Vectorized draws of the next (time, mark) from a fixed history."""
    law = model.survival_law(level, history)
    v, w = rng.random(n), rng.random(n)
    gT = float(law.survival(model.horizon))
    inside = v >= gT
    times = np.full(n, BEYOND)
    if np.any(inside):
        s = np.asarray(law.inverse(v[inside]), dtype=float)
        times[inside] = np.minimum(np.maximum(s, history.dmax), model.horizon)
        times[inside] = np.where(np.isfinite(s), times[inside], BEYOND)
    marks = np.full(n, DELTA)
    ok = np.isfinite(times)
    if np.any(ok):
        weights = model.mark_kernel(level, history).weights(times[ok])
        marks[ok] = _draw_mark(weights, w[ok])
    return times, marks


def check_compensator_identity(model, level, history, h, n_mc, rng, n_grid=2000):
    """Compare the compensator integral of h with E[h(S, X) e^{a(S)} 1{S <= T}].

    Returns (lhs, rhs, se) where rhs is a Monte Carlo estimate with standard error se.
    """
    lhs = integrate_kernel(model, level, history, h, history.dmax, model.horizon, n_grid)
    law = model.survival_law(level, history)
    times, marks = sample_next_batch(model, level, history, rng, n_mc)
    vals = np.zeros(n_mc)
    ok = np.isfinite(times)
    if np.any(ok):
        hv = np.asarray(h(times[ok], marks[ok]), dtype=float) * np.ones(ok.sum())
        vals[ok] = hv * np.exp(law.hazard(times[ok]))
    rhs = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else 0.0
    return lhs, rhs, se
