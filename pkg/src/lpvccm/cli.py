"""Command-line entry point (``lpvccm``)."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import casestudy
from .config import (EXIT_EXPRESSION, EXIT_OK, EXIT_PREDICATE, EXIT_RUNTIME, EXIT_SCHEMA, ConfigError,
                     jacobian_check, load, run, run_file)
from .exprlang import ExprError
from .geometry import Metric, MetricError, solve_geodesic


def _print_report(report, stream=sys.stdout) -> None:
    for name, summ in report.summaries.items():
        lam = summ.get("lambda_fit")
        lam_s = "n/a" if lam is None else f"{lam:.4f}"
        extra = f" steady_error={summ['steady_error']:.3e}" if "steady_error" in summ else ""
        print(f"{name}: diverged={summ['diverged']} lambda_fit={lam_s}{extra}", file=stream)
    for name, cert in report.certificates.items():
        if "error" in cert:
            print(f"{name}: error: {cert['error']}", file=stream)
        else:
            print(f"{name}: {cert['verdict']} value={cert['value']} worst_eig={cert['worst_eig']:.4e}",
                  file=stream)
    for msg in report.failures:
        print(f"FAIL {msg}", file=sys.stderr)


def cmd_casestudy(args) -> int:
    cfg = casestudy.builtin_config(args.out)
    if args.dt is not None:
        for sc in cfg["scenarios"]:
            sc["dt"] = args.dt
    scen = [args.scenario] if args.scenario else list(casestudy.SCENARIOS)
    ctrls = [args.controller] if args.controller else list(casestudy.CONTROLLERS)
    only = {(s, c) for s in scen for c in ctrls}
    if args.dump_config:
        Path(args.dump_config).write_text(json.dumps(cfg, indent=2) + "\n")
        return EXIT_OK
    report = run(cfg, args.out, certifications=not args.no_certify, only=only)
    _print_report(report)
    return report.exit_code


def cmd_run(args) -> int:
    report = run_file(args.config, args.out)
    _print_report(report)
    return report.exit_code


def cmd_certify(args) -> int:
    report = run_file(args.config, args.out, scenarios=False)
    _print_report(report)
    return report.exit_code


def _vector(text: str) -> np.ndarray:
    try:
        v = json.loads(text)
    except json.JSONDecodeError:
        v = [float(p) for p in text.split(",")]
    return np.atleast_1d(np.asarray(v, dtype=float))


def cmd_geodesic(args) -> int:
    try:
        x0, x1 = _vector(args.from_), _vector(args.to)
    except ValueError as exc:
        print(f"error: bad point ({exc})", file=sys.stderr)
        return EXIT_SCHEMA
    if x0.shape != x1.shape:
        print("error: endpoints have different dimensions", file=sys.stderr)
        return EXIT_SCHEMA
    n = len(x0)
    states = args.states.split(",") if args.states else [f"x{i + 1}" for i in range(n)]
    try:
        raw = json.loads(args.metric)
    except json.JSONDecodeError:
        raw = args.metric
    if isinstance(raw, (str, int, float)):
        raw = [[raw]]
    try:
        metric = Metric(raw, states)
    except ExprError as exc:
        print(f"error: metric: {exc}", file=sys.stderr)
        return EXIT_EXPRESSION
    except MetricError as exc:
        print(f"error: metric: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        path = solve_geodesic(metric, x0, x1, N=args.nodes, tol=args.tol, max_iter=args.max_iter)
    except ExprError as exc:
        print(f"error: metric: {exc}", file=sys.stderr)
        return EXIT_EXPRESSION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        out.write(f"# energy={path.energy!r} length={path.length!r} converged={path.converged}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["s"] + list(states))
        for s, row in zip(path.s, path.nodes):
            w.writerow([repr(float(s))] + [repr(float(v)) for v in row])
    finally:
        if args.out:
            out.close()
    if not path.converged:
        print(f"warning: geodesic solver stopped at gradient norm {path.grad_norm:.3e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_jaccheck(args) -> int:
    try:
        cfg = load(args.config)
        res = jacobian_check(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    ok = res["max_rel_error"] <= args.tol
    print(f"{res['model']}: max relative Jacobian error {res['max_rel_error']:.3e} "
          f"over {res['points']} points ({'ok' if ok else 'FAIL'})")
    return EXIT_OK if ok else EXIT_PREDICATE


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lpvccm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("casestudy", help="run the built-in benchmark scenarios")
    c.add_argument("--scenario", choices=sorted(casestudy.SCENARIOS))
    c.add_argument("--controller", choices=casestudy.CONTROLLERS)
    c.add_argument("--out", default="casestudy_out")
    c.add_argument("--dt", type=float, help="override the integration step")
    c.add_argument("--no-certify", action="store_true", help="skip the certificate checks")
    c.add_argument("--dump-config", metavar="PATH", help="write the built-in config and exit")
    c.set_defaults(func=cmd_casestudy)

    r = sub.add_parser("run", help="run every certification and simulation in a config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.set_defaults(func=cmd_run)

    k = sub.add_parser("certify", help="run only the certifications of a config")
    k.add_argument("config")
    k.add_argument("--out")
    k.set_defaults(func=cmd_certify)

    g = sub.add_parser("geodesic", help="minimum-energy path under a metric, as CSV")
    g.add_argument("--metric", required=True, help="JSON matrix of expressions in x1..xn")
    g.add_argument("--from", dest="from_", required=True, help="start point, JSON list or a,b,...")
    g.add_argument("--to", required=True)
    g.add_argument("--nodes", type=int, default=50)
    g.add_argument("--tol", type=float, default=1e-8)
    g.add_argument("--max-iter", type=int, default=500)
    g.add_argument("--states", help="comma-separated state names (default x1..xn)")
    g.add_argument("--out", help="CSV file (default stdout)")
    g.set_defaults(func=cmd_geodesic)

    j = sub.add_parser("jaccheck", help="finite-difference check of the model Jacobians")
    j.add_argument("config")
    j.add_argument("--tol", type=float, default=1e-5)
    j.set_defaults(func=cmd_jaccheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
