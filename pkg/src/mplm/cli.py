"""Command-line front end.

Subcommands: ``solve`` (one trajectory to CSV), ``convergence`` (error/order
tables over an h ladder), ``work-precision`` (timed error grid) and
``validate`` (coefficient and problem-structure audit).

Step sizes are given as exponents to avoid float parsing drift: ``--h-exp M``
means h = 2^-M, ``--h-exp-range A:B`` the ladder 2^-A .. 2^-B, and
``--steps N`` means h = T/N.  Exit codes: 0 success, 1 validation failure,
2 usage error, 3 numeric failure.  The environment variable ``MPLM_FLOOR``
overrides the default positivity floor; ``--floor`` wins over both.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .exceptions import MplmError
from .harness import (ConvergenceReport, convergence_study, _fmt,
                      reference_solution, work_precision)
from .methods import catalog, get_method, method_names, validate_order_conditions
from .pds import REALMIN, check_conservativity
from .problems import PROBLEM_NAMES, make_problem, sample_positive_states
from .stepping import integrate


def _default_floor() -> float:
    env = os.environ.get("MPLM_FLOOR")
    return float(env) if env else REALMIN


def _parse_exp_range(text: str):
    try:
        lo, hi = text.split(":")
        lo, hi = int(lo), int(hi)
    except ValueError:
        raise ValueError(f"expected M0:M1 exponent range, got {text!r}") from None
    if lo > hi:
        raise ValueError(f"exponent range must be increasing, got {text!r}")
    return [2.0 ** (-m) for m in range(lo, hi + 1)]


def _parse_methods(text: str):
    if text == "all":
        return list(method_names())
    names = [t for t in text.split(",") if t]
    if not names:
        raise ValueError("empty method list")
    for n in names:
        get_method(n)  # raises with the available names
    return names


def _problem_from_args(args):
    return make_problem(args.problem, nx=getattr(args, "nx", None),
                        floor=args.floor,
                        profile=getattr(args, "profile", "constant"))


def _h_list_from_args(args):
    if args.h_exp_range is not None:
        return _parse_exp_range(args.h_exp_range)
    if args.h_exp is not None:
        return [2.0 ** (-args.h_exp)]
    raise ValueError("specify --h-exp or --h-exp-range")


def cmd_solve(args) -> int:
    problem = _problem_from_args(args)
    kwargs = {}
    if args.steps is not None:
        kwargs["n_steps"] = args.steps
    elif args.h_exp is not None:
        kwargs["h"] = 2.0 ** (-args.h_exp)
    else:
        raise ValueError("specify --h-exp or --steps")
    traj = integrate(problem, args.method, validate=args.validate,
                     floor=args.floor, **kwargs)
    lines = ["t," + ",".join(f"y_{i + 1}" for i in range(problem.dim))]
    for t, y in zip(traj.times, traj.states):
        lines.append(",".join([_fmt(t)] + [_fmt(v) for v in y]))
    text = "\n".join(lines) + "\n"
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    print(f"min_component={_fmt(traj.min_over_run)} "
          f"conservation_residual={_fmt(traj.max_conservation_residual)}",
          file=sys.stderr)
    return 0


def cmd_convergence(args) -> int:
    problem = _problem_from_args(args)
    methods = _parse_methods(args.methods)
    h_list = _h_list_from_args(args)
    # One shared reference on the finest grid.
    n_fine = round(problem.horizon / h_list[-1])
    times = np.linspace(0.0, problem.horizon, n_fine + 1)
    reference = reference_solution(problem, times, floor=args.floor)
    out_dir = None
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
    for name in methods:
        report = convergence_study(problem, name, h_list, metric=args.metric,
                                   reference=reference, validate=args.validate,
                                   floor=args.floor, jobs=args.jobs)
        print(report)
        print()
        if out_dir is not None:
            report.to_csv(out_dir / f"{problem.label}_{name}.csv")
    return 0


def cmd_work_precision(args) -> int:
    problem = _problem_from_args(args)
    methods = _parse_methods(args.methods)
    h_list = _h_list_from_args(args)
    table = work_precision(problem, methods, h_list, repeats=args.repeats,
                           floor=args.floor)
    text = table.csv_text()
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return 0


def cmd_validate(args) -> int:
    failures = 0
    for coeffs in catalog():
        residuals = validate_order_conditions(coeffs)
        worst = float(residuals.max())
        if worst <= 1e-12:
            print(f"method {coeffs.name}: order conditions ok "
                  f"(max residual {_fmt(worst)})")
        else:
            failures += 1
            q = int(np.argmax(residuals))
            print(f"method {coeffs.name}: FAIL order condition q={q} "
                  f"residual {_fmt(residuals[q])}")
    for name in PROBLEM_NAMES:
        problem = make_problem(name, floor=args.floor)
        samples = sample_positive_states(problem, 50)
        result = check_conservativity(problem, samples, tol=0.0)
        if result.passed:
            print(f"problem {name}: conservative (residual "
                  f"{_fmt(result.residual)})")
        else:
            failures += 1
            print(f"problem {name}: FAIL conservativity residual "
                  f"{_fmt(result.residual)}")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mplm",
        description="Positivity-preserving conservative multistep integrators "
                    "for production-destruction systems")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, methods=False):
        p.add_argument("--problem", required=True, choices=PROBLEM_NAMES)
        if methods:
            p.add_argument("--methods", required=True,
                           help="comma-separated method names or 'all'")
        else:
            p.add_argument("--method", required=True)
        p.add_argument("--floor", type=float, default=_default_floor(),
                       help="replacement for zero initial components")
        p.add_argument("--nx", type=int, default=None,
                       help="cell count for the diffusion problem")
        p.add_argument("--profile", choices=("constant", "bump"),
                       default="constant",
                       help="diffusion initial profile")

    p = sub.add_parser("solve", help="integrate once and write t,y CSV")
    common(p)
    p.add_argument("--h-exp", type=int, default=None, help="h = 2^-M")
    p.add_argument("--steps", type=int, default=None, help="h = T/N")
    p.add_argument("--out", default="-")
    p.add_argument("--validate", action="store_true",
                   help="run M-matrix checks on every step")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("convergence", help="error/order table over an h ladder")
    common(p, methods=True)
    p.add_argument("--h-exp", type=int, default=None)
    p.add_argument("--h-exp-range", default=None, help="M0:M1 for 2^-M0..2^-M1")
    p.add_argument("--metric", choices=("max", "mean-rel", "rel-max"),
                   default="max")
    p.add_argument("--out", default=None, help="directory for one CSV per method")
    p.add_argument("--validate", action="store_true")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel study cells (default 1, deterministic timing)")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("work-precision", help="timed error grid")
    common(p, methods=True)
    p.add_argument("--h-exp", type=int, default=None)
    p.add_argument("--h-exp-range", default=None)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_work_precision)

    p = sub.add_parser("validate",
                       help="audit coefficient sets and problem structure")
    p.add_argument("--floor", type=float, default=_default_floor())
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MplmError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
