"""Seeded path batches and per-path compensator integrals.

Paths are simulated in fixed-size chunks, each with its own random stream
derived from (seed, kind, chunk index), so results do not depend on how many
workers run the chunks.
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .mpp import BEYOND, DELTA, History, NoJumpLaw, Path, _draw_mark, sample_next
from .quadrature import HazardRule, level_grid

CHUNK = 1000
DEFAULT_CAP = 1000


def stream(seed, kind, index=0):
    """Independent generator for one (seed, kind, index) triple."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(kind.encode()), int(index)])
    return np.random.default_rng(ss)


def mean_se(values):
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n == 0:
        return 0.0, 0.0
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(values.mean()), se


@dataclass
class PathBatch:
    """Padded arrays describing many paths.

    ``times``/``marks`` are (n, J) padded with inf / DELTA; ``comp`` holds the
    compensator at S_0 = 0, S_1, ..., S_J (nan padded) and ``comp_T`` is A_T.
    """

    times: np.ndarray
    marks: np.ndarray
    counts: np.ndarray
    comp: np.ndarray
    comp_T: np.ndarray
    truncated: np.ndarray
    horizon: float

    def __len__(self):
        return len(self.counts)

    @property
    def width(self):
        return self.times.shape[1]

    def path(self, i):
        c = int(self.counts[i])
        jumps = list(zip(self.times[i, :c].tolist(), self.marks[i, :c].tolist()))
        return Path(jumps, self.horizon, truncated=bool(self.truncated[i]))

    def history(self, i, k):
        return History._limit(tuple(zip(self.times[i, :k].tolist(), self.marks[i, :k].tolist())))

    def jump_start(self, k):
        """S_k for every path (0 for k = 0, inf where the path has fewer jumps)."""
        if k == 0:
            return np.zeros(len(self))
        return self.times[:, k - 1] if k - 1 < self.width else np.full(len(self), BEYOND)

    @staticmethod
    def concat(parts, horizon):
        width = max([p.times.shape[1] for p in parts] + [0])

        def pad(a, w, fill):
            out = np.full((a.shape[0], w), fill, dtype=a.dtype)
            out[:, :a.shape[1]] = a
            return out

        return PathBatch(
            np.concatenate([pad(p.times, width, BEYOND) for p in parts]),
            np.concatenate([pad(p.marks, width, DELTA) for p in parts]),
            np.concatenate([p.counts for p in parts]),
            np.concatenate([pad(p.comp, width + 1, np.nan) for p in parts]),
            np.concatenate([p.comp_T for p in parts]),
            np.concatenate([p.truncated for p in parts]),
            horizon,
        )


def _groups(keys):
    """Map each distinct row of ``keys`` to the indices holding it (sorted order)."""
    if keys.shape[1] == 0:
        return [np.arange(keys.shape[0])]
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    order = np.argsort(inv, kind="stable")
    splits = np.flatnonzero(np.diff(inv[order])) + 1
    return np.split(order, splits)


def _simulate_chunk_markov(model, n, rng, cap, flag_cap):
    T = model.horizon
    times = np.full((n, cap), BEYOND)
    marks = np.full((n, cap), DELTA, dtype=int)
    comp = np.full((n, cap + 1), np.nan)
    comp[:, 0] = 0.0
    comp_T = np.zeros(n)
    counts = np.zeros(n, dtype=int)
    alive = np.arange(n)
    for k in range(cap):
        if len(alive) == 0:
            break
        u = rng.random((len(alive), 2))
        for grp in _groups(marks[alive, :k]):
            idx = alive[grp]
            d = times[idx, k - 1] if k > 0 else np.zeros(len(idx))
            rep = History._limit(tuple(zip([float(d.min())] * k, marks[idx[0], :k].tolist())))
            law = model.survival_law(k, rep)
            a_d = law.hazard(d)
            if isinstance(law, NoJumpLaw):
                comp_T[idx] = comp[idx, k]
                continue
            gd = law.survival(d)
            v, w = u[grp, 0], u[grp, 1]
            jump = v * gd >= law.survival(T)
            s = np.full(len(idx), BEYOND)
            if np.any(jump):
                s[jump] = law.inverse(v[jump] * gd[jump])
                jump &= np.isfinite(s) & (s <= T)
            stay = idx[~jump]
            comp_T[stay] = comp[stay, k] + law.hazard(T) - a_d[~jump]
            if np.any(jump):
                j = idx[jump]
                sj = np.maximum(s[jump], np.nextafter(d[jump], np.inf))
                times[j, k] = sj
                weights = model.mark_kernel(k, rep).weights(sj)
                marks[j, k] = _draw_mark(weights, w[jump])
                comp[j, k + 1] = comp[j, k] + law.hazard(sj) - a_d[jump]
                counts[j] = k + 1
        alive = alive[counts[alive] == k + 1]
    truncated = np.zeros(n, dtype=bool)
    if len(alive):
        # paths that hit the cap: compensator runs on to T only if the model itself stops
        for i in alive:
            h = History._limit(tuple(zip(times[i].tolist(), marks[i].tolist())))
            law = model.survival_law(cap, h)
            comp_T[i] = comp[i, cap] + float(law.hazard(T))
            truncated[i] = flag_cap and not isinstance(law, NoJumpLaw)
    return PathBatch(times, marks, counts, comp, comp_T, truncated, T)


def _simulate_chunk_generic(model, n, rng, cap, flag_cap):
    T = model.horizon
    times = np.full((n, cap), BEYOND)
    marks = np.full((n, cap), DELTA, dtype=int)
    comp = np.full((n, cap + 1), np.nan)
    comp_T = np.zeros(n)
    counts = np.zeros(n, dtype=int)
    truncated = np.zeros(n, dtype=bool)
    for i in range(n):
        history = History()
        A = 0.0
        comp[i, 0] = 0.0
        for k in range(cap + 1):
            law = model.survival_law(k, history)
            if k == cap:
                comp_T[i] = A + float(law.hazard(T))
                truncated[i] = flag_cap and not isinstance(law, NoJumpLaw)
                break
            s, x = sample_next(model, k, history, rng)
            if math.isinf(s):
                comp_T[i] = A + float(law.hazard(T))
                break
            A += float(law.hazard(s))
            times[i, k], marks[i, k], comp[i, k + 1] = s, x, A
            counts[i] = k + 1
            history = history.extend(s, x)
    return PathBatch(times, marks, counts, comp, comp_T, truncated, T)


def simulate_batch(model, n, seed, kind="paths", cap=None, chunk=CHUNK, workers=1):
    """Simulate ``n`` paths; identical output for any number of ``workers``."""
    limit = model.max_jumps if model.max_jumps is not None else DEFAULT_CAP
    flag_cap = cap is not None and cap < limit
    cap = min(limit, cap) if cap is not None else limit
    sim = _simulate_chunk_markov if model.markov else _simulate_chunk_generic
    sizes = [min(chunk, n - c0) for c0 in range(0, n, chunk)]

    def run(c):
        return sim(model, sizes[c], stream(seed, kind, c), cap, flag_cap)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(c) for c in range(len(sizes))]
    batch = PathBatch.concat(parts, model.horizon)
    # trim unused columns so the width reflects the realized maximum
    width = int(batch.counts.max()) if len(batch) else 0
    batch.times, batch.marks = batch.times[:, :width], batch.marks[:, :width]
    batch.comp = batch.comp[:, :width + 1]
    return batch


def model_source(model, nodal, n_grid=2000):
    """Segment source integrating ``nodal(level, history, nodes, weights)`` against a level law."""

    def source(level, history):
        law = model.survival_law(level, history)
        rule = HazardRule(law, level_grid(history.dmax, model.horizon, n_grid))
        w = model.mark_kernel(level, history).weights(rule.nodes)
        return rule, np.asarray(nodal(level, history, rule.nodes, w), dtype=float)

    return source


def segment_integrals(model, batch, source, beta=0.0, alpha=1.0, lower=None, levels=None):
    """Per-path sum over inter-jump segments of  int v(s) e^{beta A_s} alpha^{N_s} da(s).

    ``source(level, history)`` returns a ``HazardRule`` and nodal values ``v``
    for the level law of ``history``.  For Markov models one call serves every
    path sharing the marks; the hazard offset is corrected per path.  Segments
    are clipped from below by ``lower`` (per path) when given.
    """
    n = len(batch)
    T = batch.horizon
    total = np.zeros(n)
    top = int(batch.counts.max()) if n else 0
    for k in range(top + 1):
        if levels is not None and k not in levels:
            continue
        have = np.flatnonzero(batch.counts >= k)
        if len(have) == 0:
            continue
        start = batch.jump_start(k)[have]
        end = batch.times[have, k] if k < batch.width else np.full(len(have), BEYOND)
        end = np.minimum(end, T)
        lo = start if lower is None else np.maximum(start, lower[have])
        keep = lo < end
        have, start, lo, end = have[keep], start[keep], lo[keep], end[keep]
        if len(have) == 0:
            continue
        if model.markov:
            groups = _groups(batch.marks[have, :k])
        else:
            groups = [np.array([j]) for j in range(len(have))]
        for grp in groups:
            idx = have[grp]
            i0 = idx[np.argmin(start[grp])]
            rep = batch.history(i0, k)
            rule, vals = source(k, rep)
            a_nodes = rule.a
            vals = vals * np.exp(beta * a_nodes) if beta else vals
            cum = rule.cumulative(vals)
            part = rule.between(vals, lo[grp], end[grp], cum)
            if beta:
                part = part * np.exp(beta * (batch.comp[idx, k] - rule.law.hazard(start[grp])))
            total[idx] += part * alpha ** k
    return total
