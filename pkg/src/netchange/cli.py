"""Command-line entry point: ``netchange {run,calibrate,solve-limits,verify}``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys

from . import harness
from .config import PRESETS, ConfigError, load_scenario
from .detector import CUSUM
from .models import IndepER, IndepErgmEdges, MarkovER, MarkovErgmEdgesCross
from .network import n_slots
from .oracle import PATH_BUDGET, RULE_BUDGET, BudgetExceeded, run_verification
from .solver import _atomic_write, solve_limits

log = logging.getLogger("netchange")


def _scenario_args(p):
    p.add_argument("scenario", help=f"YAML scenario file or preset name ({', '.join(PRESETS)})")
    p.add_argument("--reps", type=int, help="replications for calibration and final estimates")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--workers", type=int, help="worker processes (default: $NETCHANGE_WORKERS or 1)")
    p.add_argument("--epsilon-arl", type=float, help="calibration tolerance on ARL0")
    p.add_argument("--gamma", type=float, help="target ARL0")
    p.add_argument("--grid-points", type=int, help="y-grid size of the limit solver")
    p.add_argument("--inner-samples", type=int, help="inner draws per (step, s) when the solver runs in mc mode")
    p.add_argument("--out", help="output path (written atomically)")


def _load(args):
    return load_scenario(
        args.scenario,
        reps=args.reps,
        seed=args.seed,
        workers=args.workers,
        epsilon_arl=args.epsilon_arl,
        gamma=args.gamma,
        y_points=args.grid_points,
        inner_samples=args.inner_samples,
    )


def _write_text(path, text):
    data = text.encode()
    _atomic_write(path, lambda fh: fh.write(data))


def cmd_run(args) -> int:
    cfg = _load(args)
    rows = harness.run_scenario(cfg)
    print(harness.summary(rows))
    if args.out:
        harness.write_csv(rows, args.out)
    else:
        sys.stdout.write(harness.rows_to_csv(rows))
    failed = [r.policy for r in rows if r.error]
    if failed:
        print(f"error: calibration failed for {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_calibrate(args) -> int:
    cfg = _load(args)
    specs = [p for p in cfg.policies if args.policy in (None, p.family)]
    if not specs:
        print(f"error: scenario has no {args.policy!r} policy", file=sys.stderr)
        return 2
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "c_gamma", "arl0", "arl0_se", "iterations", "converged"])
    for spec in specs:
        res = harness.calibrate(cfg, spec)
        note = "" if res.converged else "  (ARL0 jumps across gamma here)"
        print(f"{spec.label:<8} c_gamma={res.c_gamma:.6g}  ARL0={res.arl0}  iterations={res.iterations}{note}")
        for msg in res.diagnostics:
            print(f"warning: {msg}", file=sys.stderr)
        w.writerow([spec.label, f"{res.c_gamma:.6g}", f"{res.arl0.value:.4f}", f"{res.arl0.se:.4f}",
                    res.iterations, res.converged])
    if args.out:
        _write_text(args.out, buf.getvalue())
    return 0


def cmd_solve_limits(args) -> int:
    cfg = _load(args)
    table = solve_limits(cfg.model, cfg.weights, args.c, cfg.N, cfg.grid)
    s = 0 if table.markov_order else None
    print(f"N={table.N} c={table.c:g} order={table.markov_order} y-grid {table.grid.size} points up to {table.y_max:.4g}")
    print(f"l_0(0{'' if s is None else ', s=0'}) = {float(table.evaluate(0, 0.0, s)):.6g}; "
          f"l_N = {float(table.evaluate(table.N, 0.0, s)):.6g}")
    if args.out:
        table.save(args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_verify(args) -> int:
    models = []
    for d in args.d:
        models += [IndepErgmEdges(-2.0, -2.2, d=d), MarkovErgmEdgesCross(-0.08, -0.10, d=d),
                   IndepER(0.5, 0.6, d=d), MarkovER(0.2, d=d)]
    for d in args.d:
        count = (2 ** n_slots(d, False)) ** (args.N + 1)
        if count > args.path_budget:
            print(f"refused: d={d}, N={args.N} needs {count} paths, over the budget of {args.path_budget}",
                  file=sys.stderr)
            return 2
    failures = 0
    try:
        for name, ok, detail in run_verification(
            models, CUSUM, N=args.N, include_step1=args.include_step1, step1_N=tuple(args.step1_N),
            path_budget=args.path_budget, rule_budget=args.rule_budget,
        ):
            failures += not ok
            print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())
    except BudgetExceeded as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 2
    print(f"{'all checks passed' if not failures else f'{failures} check(s) failed'}")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netchange", description="Change detection in network sequences.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="calibrate every policy and estimate ARL0 and J_N")
    _scenario_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("calibrate", help="calibrate c for one or all policies")
    _scenario_args(p)
    p.add_argument("--policy", choices=harness.FAMILIES)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("solve-limits", help="solve the optimal dynamic limits at a given c")
    _scenario_args(p)
    p.add_argument("--c", type=float, required=True)
    p.set_defaults(func=cmd_solve_limits)

    p = sub.add_parser("verify", help="run the exhaustive-enumeration checks")
    p.add_argument("--d", type=int, nargs="+", default=[2, 3], help="node counts to enumerate")
    p.add_argument("--N", type=int, default=3, help="horizon for the enumeration checks")
    p.add_argument("--include-step1", action="store_true", help="also enumerate every stopping time (d=2 only)")
    p.add_argument("--step1-N", type=int, nargs="+", default=[2])
    p.add_argument("--path-budget", type=int, default=PATH_BUDGET)
    p.add_argument("--rule-budget", type=int, default=RULE_BUDGET)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
