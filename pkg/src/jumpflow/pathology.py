"""Counter-examples when the compensator has an atom or the jump law fills [0, T].

``atom_classify`` solves the scalar system of a single possible jump at a
fixed time r with probability p.  ``pb1_family`` builds the one-parameter
family of solutions of the martingale equation when the jump time is almost
surely before the horizon.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .quadrature import HazardRule


@dataclass(frozen=True)
class AtomCase:
    """Jump at time r with probability p, terminal a on {S = r} and b otherwise."""

    r: float
    p: float
    a: float
    b: float
    f: Callable

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError("atom mass p must lie in (0, 1)")
        if not self.r > 0:
            raise ValueError("atom time must be positive")


@dataclass
class AtomResult:
    kind: str  # "unique", "none" or "infinite"
    quadruple: tuple | None = None  # (gamma, delta, rho, eta)
    witnesses: tuple = ()
    note: str = ""


def atom_classify(case, tol=1e-10, bracket=1e6):
    """Classify the solutions of delta = b + p f(delta, a - b).

    The residual phi(delta) = b + p f(delta, gamma) - delta is first probed for
    an affine shape; the affine family is decided exactly (slope zero gives
    either no solution or a whole line of them).  Otherwise a sign change is
    searched on expanding brackets and refined with Brent's method.
    """
    a, b, p = case.a, case.b, case.p
    gamma = a - b

    def phi(d):
        value = float(b + p * case.f(d, gamma) - d)
        if not math.isfinite(value):
            raise ValueError(f"generator is not finite at y={d}")
        return value

    probes = np.array([b - 2.0, b - 0.5, b, b + 1.0, b + 3.0])
    vals = np.array([phi(d) for d in probes])
    slope, icpt = np.polyfit(probes, vals, 1)
    scale = 1.0 + np.max(np.abs(vals))
    if np.max(np.abs(slope * probes + icpt - vals)) <= tol * scale:
        if abs(slope) <= tol * scale:
            if abs(icpt) <= tol * scale:
                return AtomResult("infinite", witnesses=((gamma, b, a, b), (gamma, b + 1.0, a, b)),
                                  note="residual vanishes identically")
            return AtomResult("none", note=f"residual is the nonzero constant {icpt:.6g}")
        # anchor at an exact residual evaluation to avoid fit roundoff
        delta = float(b - phi(b) / slope)
        return AtomResult("unique", (gamma, delta, a, b))
    # nonaffine: look for sign changes on growing brackets
    width = 1.0
    while width <= bracket:
        grid = np.linspace(b - width, b + width, 401)
        vals = np.array([phi(d) for d in grid])
        roots = []
        exact = grid[vals == 0.0]
        roots.extend(exact.tolist())
        change = np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)
        for i in change:
            roots.append(brentq(phi, grid[i], grid[i + 1], xtol=1e-14))
        if roots:
            roots = sorted(set(round(r, 12) for r in roots))
            if len(roots) == 1:
                return AtomResult("unique", (gamma, float(roots[0]), a, b))
            quads = tuple((gamma, d, a, b) for d in roots[:2])
            return AtomResult("infinite" if len(roots) > 2 else "multiple", witnesses=quads,
                              note=f"{len(roots)} roots found on the bracket")
        width *= 10.0
    return AtomResult("none", note=f"no sign change of the residual on [b-{bracket:g}, b+{bracket:g}]")


def affine_dichotomy(a, b, g):
    """Decision for f(y, z) = (y + g(z)) / p: solutions exist iff b + g(a - b) = 0, then infinitely many."""
    return "infinite" if b + g(a - b) == 0 else "none"


# ---------------------------------------------------------------------------
# support filling [0, T]
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SupportCase:
    """Jump law with continuous survival g, g(0)=1, vanishing at the support end v <= T.

    ``h`` gives the terminal value h(S); ``inverse`` (optional) inverts g.
    """

    survival: Callable
    h: Callable
    v: float
    inverse: Callable | None = None

    def hazard(self, t):
        with np.errstate(divide="ignore"):
            return -np.log(self.survival(t))

    def time_of_hazard(self, a):
        """Time with hazard a (vectorized bisection when no inverse is given)."""
        a = np.asarray(a, dtype=float)
        if self.inverse is not None:
            return np.asarray(self.inverse(np.exp(-a)), dtype=float)
        lo, hi = np.zeros_like(a), np.full_like(a, self.v)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            below = self.hazard(mid) < a
            lo, hi = np.where(below, mid, lo), np.where(below, hi, mid)
        return 0.5 * (lo + hi)


def uniform_support(h=None, v=1.0):
    """Uniform jump law on [0, v] with terminal h (default 0)."""
    h = h or (lambda t: np.zeros_like(np.asarray(t, dtype=float)))
    return SupportCase(lambda t: 1.0 - np.asarray(t, dtype=float) / v, h, v,
                       inverse=lambda g: v * (1.0 - np.asarray(g, dtype=float)))


class _Identity:
    """Hazard measure of the variable a itself (da)."""

    smooth = True

    def hazard(self, t):
        return np.asarray(t, dtype=float)

    def rate(self, t):
        return np.ones_like(np.asarray(t, dtype=float))


@dataclass
class Pb1Result:
    w: float
    t: np.ndarray
    a: np.ndarray
    Y: np.ndarray
    residual: float
    t_clip: float
    rule: HazardRule
    hazard: Callable

    def __call__(self, t):
        """Y_t on {t < S}, for t up to the clipping time."""
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t > self.t_clip):
            warnings.warn("evaluation beyond the clipping time is clamped")
        a = np.minimum(self.hazard(t), self.a[-1])
        out = self.rule.interpolate(self.Y * np.exp(-self.a), a) * np.exp(a)
        return float(out[0]) if scalar else out

    @property
    def Y0(self):
        return float(self.Y[0])


def pb1_family(case, w, n_grid=20001, g_clip=1e-6):
    """Solution Y_t = (w - int_0^t e^{-a} h da) e^{a(t)} on {t < S}, with its equation residual.

    The grid is uniform in the hazard a up to a_clip = -log(g_clip).  The
    residual is sup_t |Y_t - w - int_0^t (Y_s - h(s)) da(s)| on [0, t_clip].
    """
    a_clip = -math.log(g_clip)
    a = np.linspace(0.0, a_clip, n_grid)
    t = case.time_of_hazard(a)
    t[0] = 0.0
    rule = HazardRule(_Identity(), a)
    h = np.asarray(case.h(t), dtype=float) * np.ones_like(a)
    integral = rule.cumulative(np.exp(-a) * h)
    Y = (w - integral) * np.exp(a)
    Y[0] = w
    residual = Y - w - rule.cumulative(Y - h)
    return Pb1Result(float(w), t, a, Y, float(np.max(np.abs(residual))), float(t[-1]), rule,
                     case.hazard)


def pb1_z(result, case, t):
    """Z_t = h(t) - Y_{t-} for t on the clipped domain."""
    return np.asarray(case.h(t), dtype=float) - result(t)
