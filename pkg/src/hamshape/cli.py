"""Command line entry point: run, trace, validate, grad-check, selftest.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure,
4 admissibility failure. Errors are reported as one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .cost import CostFunctions
from .errors import AdmissibilityError, ConfigError, HamshapeError
from .expressions import Expression
from .geometry import ScalarField
from .levelset import AnalyticLevelSet, FELevelSet, classify_domain, trace_boundary

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ADMISSIBILITY = 0, 2, 3, 4


def _exit_code(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, AdmissibilityError):
        return EXIT_ADMISSIBILITY
    return EXIT_NUMERICAL


def _emit(obj):
    print(json.dumps(obj, indent=2, default=float))


def _config(args):
    overrides = {
        "n_per_side": args.mesh_n,
        "epsilon": args.epsilon,
        "variant": args.variant,
        "max_iter": args.max_iter,
        "seed": args.seed,
    }
    return load_config(args.config, getattr(args, "preset", None), overrides)


# -- commands -----------------------------------------------------------------

def cmd_run(args):
    from .optimizer import optimize
    from .output import RunWriter

    cfg = _config(args)
    out = Path(args.out or cfg.output)
    space = cfg.build_space()
    problem = cfg.problem(space)
    writer = RunWriter(out, cfg, space, problem)
    try:
        history = optimize(problem, cfg.g0, cfg.u0, callback=writer)
    except HamshapeError as exc:
        writer.finish(error=exc.to_dict())
        raise
    summary = writer.finish(history)
    _emit({"output": str(out), "iterations": summary["iterations"],
           "initial_cost": history.states[0].cost.total, "final_cost": summary["final_cost"],
           "stop_reason": summary["stop_reason"], "components": history.component_counts})
    return EXIT_OK


def cmd_trace(args):
    from .output import write_boundary

    cfg = _config(args)
    mesh = cfg.build_space().mesh
    g = AnalyticLevelSet(args.g or cfg.g0)
    comps = trace_boundary(g, mesh, m=cfg.m)
    report = []
    for c, comp in enumerate(comps):
        gz = g.gradient(comp.z)
        report.append({
            "component": c, "x0": comp.x0.tolist(), "period": comp.period, "length": comp.length,
            "min_grad": float(np.hypot(gz[:, 0], gz[:, 1]).min()), "return_error": comp.return_error,
            "samples": len(comp.t),
        })
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            write_boundary(Path(args.out) / f"boundary_0_{c}.csv", comp)
    _emit({"g": g.expr.text, "count": len(comps), "components": report})
    return EXIT_OK


def validate_run(run_dir):
    """Direct Neumann solves on every stored configuration of a run.
    Returns the list of rows (label, t1, t2, component count)."""
    from .pde import solve_neumann_validation

    run = Path(run_dir)
    if not (run / "config.ini").is_file() or not (run / "summary.json").is_file():
        raise ConfigError(f"{run_dir} is not a completed run directory")
    cfg = load_config(run / "config.ini")
    space = cfg.build_space()
    mesh = space.mesh
    E = cfg.observation_region()
    cf = cfg.cost_functions()
    f, delta = Expression(cfg.f), Expression(cfg.delta)
    summary = json.loads((run / "summary.json").read_text())
    configs = summary.get("configurations", [])
    if not configs:
        raise ConfigError(f"{run_dir} holds no stored configurations")
    rows = []
    for entry in configs:
        g = FELevelSet(ScalarField.from_csv(space, run / entry["file"]))
        mask = classify_domain(g, mesh, E)
        sol = solve_neumann_validation(g, mask, f, delta, mesh, cfg.degree)
        t1 = t2 = 0.0
        comps = []
        if cf.has_J and E is not None:
            t1 = E.integrate(cf.J(E.quad_points, sol(E.quad_points)))
        if cf.has_j:
            comps = trace_boundary(g, mesh, m=cfg.m)
            for comp in comps:
                t2 += float((comp.weights * comp.speed) @ cf.j(comp.z, sol(comp.z)))
        rows.append({**entry, "t1": t1, "t2": t2, "triangles": int(mask.sum())})
    return rows, cfg


def cmd_validate(args):
    rows, cfg = validate_run(args.run_dir)
    column = "t1" if cfg.cost == "distributed" else "t2"
    vals = [r[column] for r in rows]
    best = int(np.argmin(vals))
    final = max(i for i, r in enumerate(rows) if r["accepted"])
    with open(Path(args.run_dir) / "validation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("label", "k", "sub_step", "lambda", "accepted", "t1", "t2"))
        for r in rows:
            w.writerow((r["label"], r["k"], r["sub_step"], "" if r["lambda"] is None else "%.6g" % r["lambda"],
                        int(r["accepted"]), "%.6g" % r["t1"], "%.6g" % r["t2"]))
    _emit({"column": column, "values": vals, "labels": [r["label"] for r in rows],
           "argmin": best, "final_index": final, "best_is_final": best == final})
    return EXIT_OK


def cmd_grad_check(args):
    from . import gradcheck
    from .hamiltonian import TracerOptions

    cfg = _config(args)
    space = cfg.build_space()
    case = gradcheck.circle_config(zero_direction=args.zero_direction)
    exact, fd, rel = gradcheck.derivative_check(case, space)
    results = [{"check": "directional_derivative", "analytic": exact, "fd": fd, "rel_error": rel}]
    rng = np.random.default_rng(cfg.seed)
    for i in range(args.random):
        e, d, r = gradcheck.derivative_check(gradcheck.random_config(rng), space)
        results.append({"check": f"random_{i}", "analytic": e, "fd": d, "rel_error": r})
    circle = AnalyticLevelSet("x^2 + y^2 - 1")
    opts = TracerOptions(h=space.mesh.h)
    for name, r in (("theta(g, g)", circle), ("theta(g, 1)", AnalyticLevelSet("1"))):
        theta, fd = gradcheck.period_check(circle, r, (1.0, 0.0), opts)
        results.append({"check": name, "analytic": theta, "fd": fd,
                        "rel_error": abs(theta - fd) / max(1.0, abs(theta))})
    ok = all(r["rel_error"] <= 1e-3 for r in results)
    _emit({"passed": ok, "results": results})
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_selftest(args):
    from .geometry import FiniteElementSpace, build_rectangle_mesh
    from .hamiltonian import TracerOptions, trace_component
    from .pde import solve_state
    from .cost import evaluate_cost

    checks = []
    opts = TracerOptions(h=6 / 96)
    T = trace_component(AnalyticLevelSet("x^2 + y^2 - 1"), (1.0, 0.0), opts).period
    checks.append(("circle period", abs(T - np.pi) < 1e-8))
    T = trace_component(AnalyticLevelSet("x^2/2.25 + y^2/0.25 - 1"), (1.5, 0.0), opts).period
    checks.append(("ellipse period", abs(T - 0.75 * np.pi) < 1e-6))
    mesh = build_rectangle_mesh((-3, 3, -3, 3), 8)
    V = FiniteElementSpace(mesh, 2)
    pts = np.random.default_rng(args.seed).uniform(-3, 3, (50, 2))
    q = V.interpolate(lambda p: 1 + p[:, 0] - 2 * p[:, 0] * p[:, 1] + p[:, 1] ** 2)
    exact = 1 + pts[:, 0] - 2 * pts[:, 0] * pts[:, 1] + pts[:, 1] ** 2
    checks.append(("quadratic reproduction", np.allclose(q(pts), exact, atol=1e-12)))
    g = AnalyticLevelSet("x^2 + y^2 - 1")
    comps = trace_boundary(g, mesh)
    y = solve_state(g, V.zero(), "-4 + x^2 + y^2 - 1", V)
    c = evaluate_cost(y, g, comps, None, CostFunctions.tracking("x^2 + y^2 - 1", boundary=True), 2.0, 0.5)
    checks.append(("cost identity", abs(c.total - (c.t1 + c.t2 + c.t3 / 0.5)) <= 1e-12 * abs(c.total)))
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_OK if all(ok for _, ok in checks) else EXIT_NUMERICAL


# -- parser -------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI configuration file")
    common.add_argument("--preset", choices=("example1", "example2"), help="built-in experiment")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--mesh-n", type=int, help="mesh subdivisions per side")
    common.add_argument("--epsilon", type=float, help="penalty parameter")
    common.add_argument("--variant", choices=("i", "ii"), help="descent direction variant")
    common.add_argument("--max-iter", type=int, help="outer iteration cap")
    common.add_argument("--seed", type=int, help="random seed for checks")
    common.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")

    p = argparse.ArgumentParser(prog="hamshape", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="optimize and write artifacts").set_defaults(fn=cmd_run)
    t = sub.add_parser("trace", parents=[common], help="trace the zero set of g0")
    t.add_argument("--g", metavar="EXPR", help="level function overriding g0")
    t.set_defaults(fn=cmd_trace)
    v = sub.add_parser("validate", parents=[common], help="Neumann solves on a finished run")
    v.add_argument("run_dir")
    v.set_defaults(fn=cmd_validate)
    gc = sub.add_parser("grad-check", parents=[common], help="derivatives against finite differences")
    gc.add_argument("--zero-direction", action="store_true", help="use r = 0, v = 0")
    gc.add_argument("--random", type=int, default=0, metavar="N", help="add N random configurations")
    gc.set_defaults(fn=cmd_grad_check)
    sub.add_parser("selftest", parents=[common], help="quick internal checks").set_defaults(fn=cmd_selftest)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "grad-check" and args.mesh_n is None:
        args.mesh_n = 48
    if args.seed is None and args.command == "selftest":
        args.seed = 0
    try:
        return args.fn(args)
    except HamshapeError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return _exit_code(exc)
    except ValueError as exc:
        print(json.dumps({"error": "config", "type": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
