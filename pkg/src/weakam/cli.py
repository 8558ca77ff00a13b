"""Command-line entry point ``weakam``.

Exit codes: 0 success, 1 failed verification, 2 configuration error,
3 numerical failure. Data goes to files (or stdout); diagnostics to stderr.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import critical_value as cv
from .config import load_config, parse_floats, parse_profile
from .discount_limit import DampingFamily, converge_study
from .discretization import Grid, build_graph
from .dynamics import ExtendedState, energy_drift, integrate, rotation_staircase
from .errors import ConfigError, ModelMismatch, NumericalFailure, ParamOutOfRange
from .model import H0_MINUS, H0_ZERO, mean_damping
from .weak_kam import (ValueField, backward_calibrated_curve, lax_oleinik_period, solve_weak_kam,
                       verify_solution)


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_json(path, obj) -> None:
    text = json.dumps(obj, indent=1) + "\n"
    if str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _opt(args, name, section: dict, default):
    """Flag value if given, else config value, else default."""
    v = getattr(args, name)
    if v is not None:
        return v
    return section.get(name, default)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_solve(args, cfg) -> int:
    sec = cfg.section("solve")
    alpha = float(_opt(args, "alpha", sec, cfg.model.alpha))
    tol = float(_opt(args, "tol", sec, 1e-9))
    grid = cfg.grid(args.nx, args.nt, args.v_max)
    graph = build_graph(cfg.model, grid)
    u = solve_weak_kam(graph, alpha, tol=tol)
    out = _opt(args, "out", sec, "u.json")
    u.to_json(out)
    if args.csv:
        u.to_csv(args.csv)
    _info(f"solve: {u.info['iterations']} periods, residual {u.info['residual']:.3e}, wrote {out}")
    return 0


def cmd_critical(args, cfg) -> int:
    sec = cfg.section("critical")
    grid = cfg.grid(args.nx, args.nt, args.v_max)
    graph = build_graph(cfg.model, grid)
    c_H, witness = cv.mane_critical_value(graph)
    drift_tol = float(_opt(args, "drift_tol", sec, 1e-6))
    c_drift = cv.critical_value_by_drift(graph, tol=drift_tol)
    z = int(_opt(args, "z", sec, int(witness.edges[0, 0])))
    s = int(_opt(args, "s", sec, int(witness.edges[0, 1])))
    n_min = int(_opt(args, "n_min", sec, 8))
    n_max = int(_opt(args, "n_max", sec, 64))
    bar = cv.peierls_barrier(graph, c_H, z, s, n_min, n_max)
    u = cv.critical_weak_kam(graph, c_H, z, s, n_min, n_max)
    mu = cv.mather_measure(witness)
    # a few base nodes spread along the witness cycle, plus the chosen one
    picks = {(z, s)}
    n_w = len(witness.edges)
    for k in (n_w // 3, 2 * n_w // 3):
        picks.add((int(witness.edges[k, 0]), int(witness.edges[k, 1])))
    bases = sorted(picks)
    diffs = cv.cross_base_differences(graph, c_H, bases, n_min, n_max)
    report = {
        "c_H": c_H,
        "c_H_drift": c_drift,
        "model_hash": graph.model_hash,
        "grid": grid.describe(),
        "rotation": witness.rotation,
        "witness_periods": witness.periods,
        "witness_cycle": witness.edges.tolist(),
        "witness_action": mu.action(),
        "base_node": [z, s],
        "stabilization_gap": bar.gap,
        "cross_base_nodes": [list(b) for b in bases],
        "cross_base_sup_diff": diffs.tolist(),
    }
    out = _opt(args, "out", sec, "critical.json")
    _write_json(out, report)
    if args.barrier_csv:
        ValueField(grid, bar.values, c_H, graph.model_hash).to_csv(args.barrier_csv)
    if args.solution_csv:
        u.to_csv(args.solution_csv)
    if args.u_out:
        u.to_json(args.u_out)
    _info(f"critical: c_H = {c_H:.12g} (drift {c_drift:.12g}), gap {bar.gap:.3e}, wrote {out}")
    return 0


def cmd_staircase(args, cfg) -> int:
    sec = cfg.section("staircase")
    c_min = float(_opt(args, "c_min", sec, 0.0))
    c_max = float(_opt(args, "c_max", sec, 2.0))
    c_step = float(_opt(args, "c_step", sec, 0.02))
    if not c_step > 0 or c_max < c_min:
        raise ParamOutOfRange("need c_step > 0 and c_max >= c_min")
    n = int(math.floor((c_max - c_min) / c_step + 1e-9)) + 1
    cs = c_min + c_step * np.arange(n)
    T = float(_opt(args, "T", sec, 400.0))
    transient = float(_opt(args, "transient", sec, 100.0))
    dt = float(_opt(args, "dt", sec, 0.01))
    res = rotation_staircase(cfg.model, cs, T=T, transient=transient, dt=dt, threads=cfg.threads)
    out = _opt(args, "out", sec, "staircase.csv")
    res.to_csv(out)
    if res.violations:
        _info(f"staircase: bound violated at c = {res.violations}")
    _info(f"staircase: {n} values, plateaus {res.plateaus()}, wrote {out}")
    return 0


def cmd_simulate(args, cfg) -> int:
    sec = cfg.section("simulate")
    s0 = ExtendedState(float(_opt(args, "x0", sec, 0.0)), float(_opt(args, "p0", sec, 0.0)), 0.0,
                       float(_opt(args, "I0", sec, 0.0)), float(_opt(args, "u0", sec, 0.0)))
    T = float(_opt(args, "T", sec, 10.0))
    dt = float(_opt(args, "dt", sec, 1e-3))
    every = int(_opt(args, "every", sec, 1))
    traj = integrate(cfg.model, s0, T, dt, record_every=every)
    out = _opt(args, "out", sec, "traj.csv")
    traj.to_csv(out, cfg.model)
    _info(f"simulate: {len(traj.samples)} samples, energy drift {energy_drift(cfg.model, traj):.3e}, wrote {out}")
    return 0


def cmd_limit(args, cfg) -> int:
    sec = cfg.section("limit")
    f1 = parse_profile(str(_opt(args, "f1", sec, "const:1.0")))
    deltas = args.deltas if args.deltas is not None else sec.get("deltas", "0.4,0.2,0.1,0.05,0.025")
    deltas = parse_floats(deltas) if isinstance(deltas, str) else [float(d) for d in deltas]
    fam = DampingFamily(cfg.model.damping, f1, tuple(deltas))
    grid = cfg.grid(args.nx, args.nt, args.v_max)
    tol = float(_opt(args, "tol", sec, 1e-2))
    rep = converge_study(cfg.model, fam, grid, tol=tol, threads=cfg.threads)
    out = _opt(args, "out", sec, "limit.json")
    d = rep.to_dict()
    d["grid"] = grid.describe()
    _write_json(out, d)
    _info(f"limit: distances {['%.3e' % x for x in rep.distances]}, wrote {out}")
    return 0


def _check_rows(cfg, u: ValueField, graph, args) -> list[tuple[str, bool, str]]:
    rows = []
    rep = verify_solution(u, graph, n_random_curves=args.n_paths, seed=cfg.seed)
    rows.append(("domination", rep.passed(args.tol), f"max violation {rep.max_violation:.3e}"))

    nx_, nt = graph.grid.nx, graph.grid.nt
    rng = np.random.default_rng(cfg.seed)
    try:
        worst = 0.0
        for _ in range(4):
            c = backward_calibrated_curve(u, graph, int(rng.integers(nx_)), int(rng.integers(nt)), 5)
            worst = max(worst, c.action_residual)
        rows.append(("calibration", worst <= 1e-6, f"max step residual {worst:.3e}"))
    except NumericalFailure as exc:
        rows.append(("calibration", False, str(exc)))

    mf, cls = mean_damping(cfg.model.damping)
    if cls in (H0_MINUS, H0_ZERO):
        bound = math.exp(-mf)
        worst = 0.0
        for _ in range(20):
            a, b = rng.normal(size=nx_), rng.normal(size=nx_)
            ta = lax_oleinik_period(graph, u.alpha, a)
            tb = lax_oleinik_period(graph, u.alpha, b)
            worst = max(worst, float(np.max(np.abs(ta - tb)) / np.max(np.abs(a - b))))
        rows.append(("contraction", worst <= bound + 1e-12, f"ratio {worst:.12f} vs {bound:.12f}"))
    else:
        rows.append(("contraction", True, "skipped: [f] < 0"))

    if cfg.model.is_mechanical:
        traj = integrate(cfg.model, ExtendedState(0.1, 0.3, 0.0, 0.2, -0.4), 10.0, 1e-3)
        drift = energy_drift(cfg.model, traj)
        rows.append(("energy_drift", drift <= 1e-7, f"drift {drift:.3e}"))

    if cls == H0_ZERO:
        c_H, witness = cv.mane_critical_value(graph)
        mu = cv.mather_measure(witness)
        div = max(abs(mu.divergence(rng.normal(size=(nx_, nt)))) for _ in range(100))
        act = abs(mu.action() + c_H)
        rows.append(("closedness", div <= 1e-10 and act <= 1e-8, f"divergence {div:.3e}, action error {act:.3e}"))
    else:
        rows.append(("closedness", True, "skipped: [f] != 0"))
    return rows


def cmd_verify(args, cfg) -> int:
    if args.u:
        u = ValueField.from_json(args.u)
        if u.model_hash != cfg.model.model_hash:
            raise ModelMismatch(f"{args.u} was computed for model {u.model_hash}, config is {cfg.model.model_hash}")
        graph = build_graph(cfg.model, Grid(u.grid.nx, u.grid.nt, u.grid.v_max, strict=False))
    else:
        graph = build_graph(cfg.model, cfg.grid(args.nx, args.nt, args.v_max))
        _, cls = mean_damping(cfg.model.damping)
        if cls == H0_ZERO:
            c_H, w = cv.mane_critical_value(graph)
            u = cv.critical_weak_kam(graph, c_H, int(w.edges[0, 0]), int(w.edges[0, 1]))
        else:
            u = solve_weak_kam(graph, cfg.model.alpha, tol=1e-11)
    rows = _check_rows(cfg, u, graph, args)
    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    failed = [r[0] for r in rows if not r[1]]
    if failed:
        _info(f"verify: failed checks: {', '.join(failed)}")
        return 1
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="weakam", description="Weak KAM toolkit for damped Hamiltonians on the circle")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML model/run configuration")
    common.add_argument("--threads", type=int, default=None, help="worker threads (env WEAKAM_THREADS)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--nx", type=int, default=None)
    common.add_argument("--nt", type=int, default=None)
    common.add_argument("--v-max", dest="v_max", type=float, default=None)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="discounted weak KAM solution ([f] > 0)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--out")
    p.add_argument("--csv", help="also write (x, t, u) CSV")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("critical", parents=[common], help="critical value and barrier ([f] = 0)")
    p.add_argument("--out")
    p.add_argument("--drift-tol", dest="drift_tol", type=float)
    p.add_argument("--z", type=int, help="base node x index")
    p.add_argument("--s", type=int, help="base node t index")
    p.add_argument("--n-min", dest="n_min", type=int)
    p.add_argument("--n-max", dest="n_max", type=int)
    p.add_argument("--barrier-csv", dest="barrier_csv")
    p.add_argument("--solution-csv", dest="solution_csv")
    p.add_argument("--u-out", dest="u_out", help="write the critical solution as JSON")
    p.set_defaults(func=cmd_critical)

    p = sub.add_parser("staircase", parents=[common], help="rotation numbers over a c grid")
    p.add_argument("--c-min", dest="c_min", type=float)
    p.add_argument("--c-max", dest="c_max", type=float)
    p.add_argument("--c-step", dest="c_step", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--transient", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_staircase)

    p = sub.add_parser("simulate", parents=[common], help="integrate the extended flow")
    for name in ("x0", "p0", "u0", "I0", "T", "dt"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--every", type=int, help="record every n-th step")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("limit", parents=[common], help="vanishing discount study")
    p.add_argument("--f1", help="e.g. const:1.0")
    p.add_argument("--deltas", help="comma separated, decreasing")
    p.add_argument("--tol", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_limit)

    p = sub.add_parser("verify", parents=[common], help="run the invariant checks")
    p.add_argument("--u", help="value field JSON to check (default: compute one)")
    p.add_argument("--n-paths", dest="n_paths", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_verify)
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, threads=args.threads, seed=args.seed)
        return args.func(args, cfg)
    except (ConfigError, ModelMismatch, OSError, KeyError, json.JSONDecodeError) as exc:
        _info(f"error: {exc}")
        return 2
    except NumericalFailure as exc:
        _info(f"error: {exc}")
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
