"""Command line runner: ``jumpflow <kind> --config FILE [--seed N] [--out DIR] [--figures]``."""

from __future__ import annotations

import argparse
import sys
import zlib
from importlib import resources
from pathlib import Path

import numpy as np

from . import examples
from .bsde import (Solver, TerminalSpec, bsde_residual, solve_truncated, uniqueness_gap)
from .config import (KINDS, ConfigError, build_control, build_model, build_problem, load_config)
from .control import FeedbackPolicy, direct_cost, optimality_check
from .estimates import (NormParams, apriori_bound_check, deterministic_bound_check,
                        identity_p1_check, stability_check, weighted_norm)
from .montecarlo import mean_se, simulate_batch, stream
from .mpp import History, Path as MppPath, check_compensator_identity
from .pathology import AtomCase, affine_dichotomy, atom_classify, pb1_family, uniform_support
from .report import Results, emit_report


def _numerics(cfg):
    return dict(n_grid=cfg.numeric("n_grid", 2000), tol=cfg.numeric("tol_picard", 1e-10),
                max_iters=cfg.numeric("max_iters", 200))


def _config_path(cfg_path):
    p = Path(cfg_path)
    if p.exists():
        return p
    bundled = resources.files("jumpflow") / "configs" / f"{cfg_path}.yaml"
    if bundled.is_file():
        return Path(str(bundled))
    return p


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def _path_from(cfg, model):
    jumps = [(float(t), int(x)) for t, x in cfg.data.get("path") or []]
    return MppPath(jumps, model.horizon)


def run_solve(cfg):
    res = Results("solve")
    model, terminal, gen = build_problem(cfg)
    num = _numerics(cfg)
    solver = Solver(model, terminal, gen, **num)
    path = _path_from(cfg, model)
    sol = solver.solve_path(path)
    ts = np.linspace(0.0, model.horizon, cfg.numeric("n_out", 101))
    rows = []
    for t in ts:
        Y, Z = sol.Y(t), sol.Z(t)
        rows.append((t, Y, *Z))
    res.add_table("solve", ["t", "Y"] + [f"Z_x{k + 1}" for k in range(model.n_marks)], rows)
    res.add_series("Y", ts, [r[1] for r in rows])
    residual = bsde_residual(sol)
    tol = cfg.numeric("tol_residual", 1e-6)
    res.check("residual", residual <= tol, f"residual {residual:.3g} <= {tol:g}")
    gap = uniqueness_gap(model, terminal, gen, [path], **num)
    res.check("uniqueness", gap < 10 * num["tol"], f"gap {gap:.3g} < {10 * num['tol']:g}")
    jumps_ok = all(abs((sol.Y(t) - sol.Y_left(t)) - z) == 0.0 for t, z in zip(path.times, sol.jump_z))
    res.check("jump_equals_Z", jumps_ok, "Y jump equals Z at every jump time")
    res.summary.update(Y0=sol.Y0(), residual=residual, uniqueness_gap=gap)
    return res


def run_simulate(cfg):
    res = Results("simulate")
    model = build_model(cfg)
    sim = cfg.block("simulate")
    n = sim.get("n_paths", cfg.numeric("n_mc", 10000))
    batch = simulate_batch(model, n, cfg.seed, kind="simulate", workers=cfg.numeric("workers", 1))
    n_table = min(sim.get("n_table", 20), n)
    rows = []
    for i in range(n_table):
        for j in range(int(batch.counts[i])):
            rows.append((i, j + 1, batch.times[i, j], int(batch.marks[i, j]) + 1))
    res.add_table("paths", ["path_id", "jump_index", "time", "mark"], rows)
    mN, seN = mean_se(batch.counts)
    mA, seA = mean_se(batch.comp_T)
    diff = batch.counts - batch.comp_T
    md, sed = mean_se(diff)
    res.add_table("summary", ["statistic", "value", "se"],
                  [("mean_jump_count", mN, seN), ("mean_compensator", mA, seA),
                   ("count_minus_compensator", md, sed)])
    res.check("count_matches_compensator", abs(md) <= 3 * sed + 1e-12,
              f"E[N_T - A_T] = {md:.4g} +- {sed:.3g}")
    cap = model.max_jumps
    if cap is not None:
        res.check("cap_respected", int(batch.counts.max()) <= cap, f"max count {batch.counts.max()}")
    tests = {"one": lambda s, x: np.ones_like(np.asarray(s, float)),
             "time": lambda s, x: np.asarray(s, float) + 0.0 * np.asarray(x),
             "mark": lambda s, x: 1.0 + np.asarray(x, float) + 0.0 * np.asarray(s)}
    rng = stream(cfg.seed, "compensator-identity")
    comp_rows = []
    for name, h in tests.items():
        lhs, rhs, se = check_compensator_identity(model, 0, History(), h, n, rng,
                                                  cfg.numeric("n_grid", 2000))
        ok = abs(lhs - rhs) <= 3 * se + 1e-12
        comp_rows.append((name, lhs, rhs, se, ok))
        res.check(f"compensator_identity_{name}", ok, f"lhs {lhs:.5f} rhs {rhs:.5f} se {se:.3g}")
    res.add_table("compensator", ["integrand", "lhs", "rhs", "se", "pass"], comp_rows)
    counts = np.bincount(batch.counts)
    res.add_series("jump_count_frequency", np.arange(len(counts)), counts / n)
    res.summary.update(n_paths=n, mean_jump_count=mN)
    return res


def run_verify_example(cfg):
    res = Results("verify-example")
    m = cfg.block("model")
    r0, r1, T = m.get("rate", 1.0), m.get("rate1", 2.0), m.get("horizon", 1.0)
    model, terminal, gen = examples.worked_example(r0, r1, T)
    num = _numerics(cfg)
    solver = Solver(model, terminal, gen, **num)
    r = 0.5 * T
    path = MppPath([(r, examples.X1), (0.8 * T, examples.X2)], T)
    sol = solver.solve_path(path)
    rows = []
    t0 = np.linspace(0.0, T, 201)
    lf0 = solver.level(0, History())
    e0 = examples.worked_y0(t0, r0, r1, T)
    y0 = lf0(t0)
    rows += [("level0", t, y, ex, abs(y - ex)) for t, y, ex in zip(t0, y0, e0)]
    t1 = np.linspace(r, T, 101)
    lf1 = solver.level(1, path.history(1))
    y1, e1 = lf1(t1), examples.worked_y1(t1, r1, T)
    rows += [("level1", t, y, ex, abs(y - ex)) for t, y, ex in zip(t1, y1, e1)]
    t2 = np.linspace(0.8 * T, T, 11)
    rows += [("level2", t, sol.Y(t), 1.0, abs(sol.Y(t) - 1.0)) for t in t2]
    res.add_table("verify", ["regime", "t", "Y", "Y_exact", "abs_error"], rows)
    max_err = max(r[-1] for r in rows)
    Y0 = solver.Y0()
    Y0_exact = float(examples.worked_y0(0.0, r0, r1, T))
    res.add_table("summary", ["quantity", "value", "reference", "abs_error"],
                  [("Y0", Y0, Y0_exact, abs(Y0 - Y0_exact)), ("max_error", max_err, 0.0, max_err)])
    res.add_series("y0_solver", t0, y0)
    res.add_series("y0_exact", t0, e0)
    res.add_series("y1_solver", t1, y1)
    tol = cfg.numeric("tol_example", 1e-3)
    res.check("closed_form", max_err <= tol, f"max error {max_err:.3g} <= {tol:g}")
    residual = bsde_residual(sol)
    res.check("residual", residual <= cfg.numeric("tol_residual", 1e-6), f"residual {residual:.3g}")
    res.summary.update(Y0=Y0, Y0_exact=Y0_exact, max_error=max_err)
    return res


def _perturbed_terminal(terminal, size, seed):
    """xi' = xi + a bounded pseudo-random function of the marks."""

    def func(n, h):
        key = zlib.crc32(repr((seed, n, h.marks)).encode()) / 2 ** 32
        return terminal.func(n, h) + size * (2.0 * key - 1.0)

    return TerminalSpec(func, marks_only=terminal.marks_only)


def run_estimates(cfg):
    res = Results("estimates")
    model, terminal, gen = build_problem(cfg)
    est = cfg.block("estimates")
    params = NormParams(est.get("alpha", 2.0), est.get("beta", 4.0))
    num = _numerics(cfg)
    n_mc = cfg.numeric("n_mc", 20000)
    solver = Solver(model, terminal, gen, **num)
    rows = []
    a = apriori_bound_check(solver, params, n_mc, cfg.seed)
    rows.append(("apriori", a.lhs, a.rhs, a.se, a.passed))
    b = deterministic_bound_check(solver)
    rows.append(("deterministic_bound", b.lhs, b.rhs, b.se, b.passed))
    t2 = _perturbed_terminal(terminal, est.get("perturbation", 0.3), cfg.seed)
    s = stability_check(model, terminal, t2, gen, params, n_mc, cfg.seed, **num)
    rows.append(("stability", s.lhs, s.rhs, s.se, s.passed))
    batch = simulate_batch(model, 25, cfg.seed, kind="identity-paths")
    tol = cfg.numeric("tol_residual", 1e-6)
    worst = max(identity_p1_check(solver.solve_path(batch.path(i)), params) for i in range(len(batch)))
    rows.append(("identity_p1", worst, tol, 0.0, worst <= tol))
    norm, se = weighted_norm(solver, params, n_mc, cfg.seed)
    rows.append(("weighted_norm", norm, float("nan"), se, bool(np.isfinite(norm))))
    res.add_table("estimates", ["check", "lhs", "rhs", "se", "pass"], rows)
    for name, lhs, rhs, se_, ok in rows:
        res.check(name, ok, f"lhs {lhs:.6g} rhs {rhs:.6g} se {se_:.3g}")
    lf = solver.level(0, History())
    res.add_series("y_level0", lf.nodes, lf.values)
    res.summary.update(Y0=solver.Y0(), alpha=params.alpha, beta=params.beta)
    return res


def run_pathology(cfg):
    res = Results("pathology")
    p_cfg = cfg.block("pathology")
    atom = p_cfg.get("atom") or {}
    p, r = atom.get("p", 0.5), atom.get("r", 0.5)
    gname = atom.get("generator", "affine")
    if gname == "affine":
        def f(y, z):
            return (y + z) / p
    elif gname == "zero":
        def f(y, z):
            return 0.0
    else:
        raise ConfigError(f"{cfg.source}:{cfg.line('pathology')}: unknown atom generator '{gname}'")
    rows = []
    for a, b in atom.get("cases", [[1, 2], [1, 0]]):
        out = atom_classify(AtomCase(r, p, a, b, f))
        delta = out.quadruple[1] if out.quadruple else float("nan")
        w = "; ".join(str(tuple(float(v) for v in q)) for q in out.witnesses)
        rows.append((a, b, p, out.kind, delta, w))
        if gname == "affine":
            expected = affine_dichotomy(a, b, lambda z: z)
            res.check(f"atom_{a}_{b}", out.kind == expected, f"{out.kind} (equation gives {expected})")
        else:
            res.check(f"atom_{a}_{b}", out.kind == "unique" and abs(delta - b) < 1e-12,
                      f"{out.kind} delta={delta}")
    res.add_table("atom", ["a", "b", "p", "kind", "delta", "witnesses"], rows)
    sup = p_cfg.get("support") or {}
    v = sup.get("v", 1.0)
    hv = sup.get("h_value", 0.0)
    h = (lambda t: np.full_like(np.asarray(t, float), hv)) if sup.get("h", "constant") == "constant" \
        else (lambda t: np.cos(np.asarray(t, float)))
    case = uniform_support(h, v)
    tol = cfg.numeric("tol_residual", 1e-6)
    srows = []
    ws = sup.get("w", [-1, 0, 1])
    fams = [pb1_family(case, w, sup.get("n_grid", 20001), sup.get("g_clip", 1e-6)) for w in ws]
    for w, fam in zip(ws, fams):
        srows.append((w, fam.Y0, fam.residual, fam(0.5 * v), fam.t_clip))
        res.check(f"support_w{w}_residual", fam.residual <= tol, f"{fam.residual:.3g}")
        res.check(f"support_w{w}_start", fam.Y0 == w, f"Y0 = {fam.Y0}")
        ts = np.linspace(0.0, 0.9 * v, 91)
        res.add_series(f"support_w{w}", ts, fam(ts))
    res.add_table("support", ["w", "Y0", "residual", "Y_mid", "t_clip"], srows)
    if len(fams) >= 3:
        ts = np.linspace(0.0, 0.9 * v, 31)
        Ys = [f(ts) for f in fams]
        lam = (ws[2] - ws[0]) and (ws[1] - ws[0]) / (ws[2] - ws[0])
        gap = float(np.max(np.abs(Ys[1] - (Ys[0] + lam * (Ys[2] - Ys[0])))))
        res.check("support_affine_in_w", gap <= 1e-8 * (1 + np.max(np.abs(Ys))), f"gap {gap:.3g}")
    return res


def run_control(cfg):
    res = Results("control")
    cm = build_control(cfg)
    c = cfg.block("control")
    n_mc = cfg.numeric("n_mc", 100000)
    n_grid = cfg.numeric("n_grid", 2000)
    rep = optimality_check(cm, n_mc, c.get("n_random", 10), cfg.seed, c.get("exhaustive", True), n_grid)
    res.add_table("control", ["policy_id", "J_hat", "se", "Y0"],
                  [(r["policy_id"], r["J_hat"], r["se"], r["Y0"]) for r in rep.rows])
    res.add_table("weights", ["policy_id", "mean_weight", "se"],
                  [(r["policy_id"], r["mean_weight"], r["weight_se"]) for r in rep.rows])
    if rep.exhaustive:
        res.add_table("exhaustive", ["policy_id", "J_exact"], sorted(rep.exhaustive.items()))
    for f in rep.findings:
        res.check(f.check, f.passed, f.detail)
    direct = c.get("direct_paths", 0)
    if direct:
        solver = Solver(cm.base, cm.terminal, cm.generator(), n_grid=n_grid)
        J, se = direct_cost(cm, FeedbackPolicy(cm, solver), direct, cfg.seed)
        res.check("direct_simulation", abs(J - rep.Y0) <= 3 * se, f"J = {J:.5f} +- {se:.4f}")
        res.summary.update(direct_J=J, direct_se=se)
    solver = Solver(cm.base, cm.terminal, cm.generator(), n_grid=n_grid)
    lf = solver.level(0, History())
    res.add_series("Y_level0", lf.nodes, lf.values)
    res.summary.update(Y0=rep.Y0)
    return res


def run_truncation(cfg):
    res = Results("truncation")
    model, terminal, gen = build_problem(cfg)
    tr = cfg.block("truncation")
    caps = [int(c) for c in tr.get("caps", [2, 4, 6])]
    n_mc = cfg.numeric("n_mc", 100000)
    num = _numerics(cfg)
    if model.max_jumps is not None:
        from dataclasses import replace
        model = replace(model, max_jumps=None)
    rep = solve_truncated(model, terminal, gen, caps, n_mc, cfg.seed, tr.get("tol"), **num)
    oracle_batch = simulate_batch(model, n_mc, cfg.seed, kind="oracle", cap=max(caps) + 40)
    xi = [terminal.func(int(k), oracle_batch.history(i, int(k))) for i, k in enumerate(oracle_batch.counts)]
    oracle, se = mean_se(xi)
    res.add_table("truncation", ["cap", "Y0", "delta", "delta_se"],
                  list(zip(rep.caps, rep.Y0, rep.delta, rep.delta_se)))
    res.add_table("oracle", ["quantity", "value", "se"], [("E_xi", oracle, se)])
    dist = [abs(y - oracle) for y in rep.Y0]
    res.check("monotone_toward_oracle", all(b < a for a, b in zip(dist, dist[1:])),
              ", ".join(f"{d:.4g}" for d in dist))
    res.check("final_within_3se", dist[-1] <= 3 * se, f"{dist[-1]:.4g} <= {3 * se:.4g}")
    res.check("delta_strictly_decreasing", all(b < a for a, b in zip(rep.delta, rep.delta[1:])),
              ", ".join(f"{d:.4g}" for d in rep.delta))
    res.add_series("Y0_by_cap", rep.caps, rep.Y0)
    res.add_series("delta_by_cap", rep.caps, rep.delta)
    res.summary.update(oracle=oracle, oracle_se=se)
    return res


RUNNERS = {
    "solve": run_solve,
    "simulate": run_simulate,
    "verify-example": run_verify_example,
    "estimates": run_estimates,
    "pathology": run_pathology,
    "control": run_control,
    "truncation": run_truncation,
}


def run_experiment(cfg, out_dir=None, figures=False):
    """Run one configured experiment and write its report; returns (exit status, results)."""
    results = RUNNERS[cfg.kind](cfg)
    out = out_dir or cfg.data.get("output") or f"jumpflow-out/{cfg.kind}"
    emit_report(results, out, cfg, figures=figures)
    return (0 if results.passed else 1), results


def main(argv=None):
    parser = argparse.ArgumentParser(prog="jumpflow", description=__doc__)
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--config", required=True,
                        help="YAML file, or the name of a bundled config")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config and JUMPFLOW_SEED")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--figures", action="store_true", help="also render PNG figures of the series")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(_config_path(args.config), args.seed, args.kind)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        status, results = run_experiment(cfg, args.out, args.figures)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, ok, detail in results.assertions:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    if status:
        failed = ", ".join(n for n, _ in results.failures())
        print(f"failed assertions: {failed}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
