"""Time grids and quadrature rules against a hazard measure da.

Level functions live on a grid ``[start] + {global nodes > start}``, where the
global nodes form a uniform grid on ``[0, T]``.  Integrals of nodal values
``F`` against ``da`` are computed either by a fourth-order rule (local cubic
interpolation of ``F * rate``) for laws with a smooth hazard rate, or by the
trapezoid rule in ``a`` with exact hazard increments otherwise.
"""

from __future__ import annotations

import numpy as np

# 3-point Gauss-Legendre on [0, 1]: exact for the degree-5 products we need.
_GL_X = np.array([0.5 - np.sqrt(15.0) / 10.0, 0.5, 0.5 + np.sqrt(15.0) / 10.0])
_GL_W = np.array([5.0, 8.0, 5.0]) / 18.0


def level_grid(start, horizon, n_grid):
    """Nodes for a level starting at ``start``.

    Global nodes closer than half a step to ``start`` are dropped so the first
    interval never degenerates.
    """
    if n_grid < 2:
        raise ValueError("n_grid must be at least 2")
    if start >= horizon:
        return np.array([float(horizon), float(horizon)])
    h = horizon / (n_grid - 1)
    glob = np.arange(n_grid) * h
    glob[-1] = horizon
    glob = glob[glob > start + 0.5 * h]
    if len(glob) == 0:
        glob = np.array([float(horizon)])
    return np.concatenate(([float(start)], glob))


def _stencils(n):
    """Start index of the interpolation stencil for each of the n-1 intervals."""
    m = min(4, n)
    return np.clip(np.arange(n - 1) - 1, 0, n - m), m


def _lagrange(xs, pts):
    """Lagrange basis of stencil ``xs`` (q, m) evaluated at ``pts`` (q, p) -> (q, p, m)."""
    q, m = xs.shape
    out = np.ones((q, pts.shape[1], m))
    for k in range(m):
        for j in range(m):
            if j != k:
                out[:, :, k] *= (pts - xs[:, j:j + 1]) / (xs[:, k:k + 1] - xs[:, j:j + 1])
    return out


class HazardRule:
    """Quadrature of nodal values against the hazard measure of ``law`` on ``nodes``."""

    def __init__(self, law, nodes):
        self.law = law
        self.nodes = np.asarray(nodes, dtype=float)
        self.a = law.hazard(self.nodes)
        self.smooth = bool(getattr(law, "smooth", False)) and len(self.nodes) > 2
        n = len(self.nodes)
        if self.smooth:
            self.rate = law.rate(self.nodes)
            self.s0, self.m = _stencils(n)
            idx = self.s0[:, None] + np.arange(self.m)
            self._idx = idx
            lo, hi = self.nodes[:-1], self.nodes[1:]
            self._w = self._partial_weights(np.arange(n - 1), lo, hi)
        else:
            self.da = np.diff(self.a)

    # -- interval machinery ------------------------------------------------
    def _partial_weights(self, intervals, lo, hi):
        xs = self.nodes[self._idx[intervals]]
        pts = lo[:, None] + (hi - lo)[:, None] * _GL_X[None, :]
        basis = _lagrange(xs, pts)
        return np.einsum("qpk,p->qk", basis, _GL_W) * (hi - lo)[:, None]

    def _weighted(self, F):
        F = np.asarray(F, dtype=float)
        return F * self.rate if F.ndim == 1 else F * self.rate[:, None]

    def interval_integrals(self, F):
        """Integral of F da over each grid interval."""
        F = np.asarray(F, dtype=float)
        if len(self.nodes) < 2:
            return np.zeros(0)
        if self.smooth:
            G = self._weighted(F)
            return np.einsum("qk,qk...->q...", self._w, G[self._idx])
        return 0.5 * (F[:-1] + F[1:]) * (self.da if F.ndim == 1 else self.da[:, None])

    def tail(self, F):
        """Integral of F da from each node to the last node."""
        J = self.interval_integrals(F)
        out = np.zeros((len(self.nodes),) + J.shape[1:])
        out[:-1] = np.cumsum(J[::-1], axis=0)[::-1]
        return out

    def cumulative(self, F):
        """Integral of F da from the first node to each node."""
        J = self.interval_integrals(F)
        out = np.zeros((len(self.nodes),) + J.shape[1:])
        out[1:] = np.cumsum(J, axis=0)
        return out

    def _locate(self, t):
        t = np.clip(np.asarray(t, dtype=float), self.nodes[0], self.nodes[-1])
        i = np.clip(np.searchsorted(self.nodes, t, side="right") - 1, 0, len(self.nodes) - 2)
        return t, i

    def _from_node(self, F, t):
        """Integral of F da from the node left of t up to t (vectorized in t)."""
        F = np.asarray(F, dtype=float)
        t, i = self._locate(t)
        lo = self.nodes[i]
        if self.smooth:
            w = self._partial_weights(i, lo, t)
            G = self._weighted(F)
            return np.einsum("qk,qk...->q...", w, G[self._idx[i]])
        frac = np.where(self.nodes[i + 1] > lo, (t - lo) / (self.nodes[i + 1] - lo), 0.0)
        if F.ndim > 1:
            frac = frac[:, None]
        Ft = F[i] + frac * (F[i + 1] - F[i])
        da = self.law.hazard(t) - self.a[i]
        if F.ndim > 1:
            da = da[:, None]
        return 0.5 * (F[i] + Ft) * da

    def cumulative_at(self, F, t, cum=None):
        """Integral of F da from the first node to arbitrary times t."""
        cum = self.cumulative(F) if cum is None else cum
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        _, i = self._locate(t_arr)
        return cum[i] + self._from_node(F, t_arr)

    def tail_at(self, F, t, cum=None):
        """Integral of F da from arbitrary times t to the last node."""
        cum = self.cumulative(F) if cum is None else cum
        return cum[-1] - self.cumulative_at(F, t, cum)

    def between(self, F, t0, t1, cum=None):
        """Integral of F da over [t0, t1] (vectorized)."""
        cum = self.cumulative(F) if cum is None else cum
        return self.cumulative_at(F, t1, cum) - self.cumulative_at(F, t0, cum)

    def interpolate(self, V, t):
        """Interpolate nodal values V at times t (cubic when smooth, else linear)."""
        V = np.asarray(V, dtype=float)
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        t_arr, i = self._locate(t_arr)
        if self.smooth:
            xs = self.nodes[self._idx[i]]
            basis = _lagrange(xs, t_arr[:, None])[:, 0, :]
            return np.einsum("qk,qk...->q...", basis, V[self._idx[i]])
        lo, hi = self.nodes[i], self.nodes[i + 1]
        frac = np.where(hi > lo, (t_arr - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0)
        if V.ndim > 1:
            frac = frac[:, None]
        return V[i] + frac * (V[i + 1] - V[i])
