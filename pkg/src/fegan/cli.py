"""Command line entry point: ``fegan run|select-arma|plot|grad-check|version``.

Exit codes: 0 success, 1 invalid plan or usage, 2 data error, 3 some runs
failed.
"""
from __future__ import annotations

import argparse
import sys

from . import __version__
from .errors import DataError, InvalidPlan, NoResultsFound, TooShort
from .experiment import emit_plot_data, load_plan, run_failures, run_plan, select_arma_cmd
from .nn import grad_check_suite

EXIT_OK, EXIT_PLAN, EXIT_DATA, EXIT_RUNS = 0, 1, 2, 3


def _cmd_run(args):
    plan = load_plan(args.plan, runs=args.runs, base_seed=args.base_seed,
                     output_dir=args.output_dir,
                     scale="paper" if args.paper_scale else None)
    summary = run_plan(plan, workers=args.workers)
    for row in summary:
        print(f"{row['cell']:<28} alpha={row['alpha']:<6} runs={row['runs']:<3} "
              f"failed={row['failed']:<3} var_median={row['var_median']:.4f} "
              f"es_median={row['es_median']:.4f}")
    print(f"results written to {plan.output_dir}")
    return EXIT_RUNS if run_failures(summary) else EXIT_OK


def _cmd_select(args):
    grid = args.grid.split(";") if args.grid else None
    kw = {"grid": grid} if grid else {}
    table, winner = select_arma_cmd(args.data, args.out, args.window, args.step,
                                    args.date_column, args.value_column, args.transform, **kw)
    means = table.mean_aic()
    for spec, m in sorted(means.items(), key=lambda kv: kv[1]):
        print(f"{spec.name:<10} mean AIC {m:.3f}")
    print(f"winner: {winner.name}")
    return EXIT_OK


def _cmd_plot(args):
    for path in emit_plot_data(args.results_dir, svg=not args.no_svg):
        print(path)
    return EXIT_OK


def _cmd_grad_check(args):
    worst = grad_check_suite(seeds=args.seeds)
    ok = worst < args.tol
    print(f"max relative error {worst:.3e} ({'ok' if ok else 'FAILED'}, tolerance {args.tol:g})")
    return EXIT_OK if ok else EXIT_PLAN


def _cmd_version(args):
    print(__version__)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="fegan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute an experiment plan")
    r.add_argument("plan")
    r.add_argument("--runs", type=int)
    r.add_argument("--base-seed", type=int)
    r.add_argument("--output-dir")
    r.add_argument("--workers", type=int, help="worker processes (default $FEGAN_WORKERS or 1)")
    r.add_argument("--paper-scale", action="store_true",
                   help="use the full network sizes instead of the desk preset")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("select-arma", help="rolling AIC/BIC sweep over the ARMA grid")
    s.add_argument("data")
    s.add_argument("--out", default="arma_selection.csv")
    s.add_argument("--window", type=int, default=500)
    s.add_argument("--step", type=int, default=50)
    s.add_argument("--date-column", default="date")
    s.add_argument("--value-column", default="value")
    s.add_argument("--transform", default="log_return", choices=("log_return", "identity"))
    s.add_argument("--grid", help='specs separated by ";", e.g. "AR(1);ARMA(2,1)"')
    s.set_defaults(func=_cmd_select)

    pl = sub.add_parser("plot", help="sorted difference curves from a results directory")
    pl.add_argument("results_dir")
    pl.add_argument("--no-svg", action="store_true")
    pl.set_defaults(func=_cmd_plot)

    g = sub.add_parser("grad-check", help="finite-difference check of backpropagation")
    g.add_argument("--seeds", type=int, default=5)
    g.add_argument("--tol", type=float, default=1e-4)
    g.set_defaults(func=_cmd_grad_check)

    v = sub.add_parser("version")
    v.set_defaults(func=_cmd_version)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvalidPlan, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PLAN
    except (DataError, TooShort, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NoResultsFound as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
