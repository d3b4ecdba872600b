"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 non-convergence or insufficient
excitation.  ``ADPT_THREADS`` caps the number of worker threads.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import controller as ctl
from . import exprdsl as ex
from .adpcore import NonConvergenceError, PersistentExcitationError
from .odeint import DivergenceError
from .benchmarks import COST_DT, COST_TF, _benchmark_setup, format_table, run_benchmark
from .modelbased import CareError, DEFAULT_SEED, LinearizationError, solve_model_based
from .modelfree import ModelFreeOptions, TrajectoryFormatError, solve_model_free
from .problemfile import ProblemFileError, load_problem

EXIT_OK, EXIT_INPUT, EXIT_ALGO = 0, 1, 2

INPUT_ERRORS = (ProblemFileError, ctl.ControllerFormatError, TrajectoryFormatError, ex.ExprError,
                LinearizationError, CareError, OSError, ValueError)
ALGO_ERRORS = (PersistentExcitationError, NonConvergenceError, DivergenceError)


def _vector(text: str, size: int | None = None, what="vector") -> np.ndarray:
    try:
        v = np.array([float(s) for s in text.replace(";", ",").split(",") if s.strip()])
    except ValueError:
        raise ValueError(f"{what} must be comma-separated numbers, got {text!r}") from None
    if size is not None and v.size != size:
        raise ValueError(f"{what} must have {size} entries, got {v.size}")
    return v


def _fmt(v) -> str:
    return "[" + ", ".join(f"{float(a):.10g}" for a in np.atleast_1d(v)) + "]"


def _report(adp, out=None) -> None:
    last = adp.history[-1]
    unknowns = last.c.size + last.W.size
    state = "converged" if adp.converged else "NOT converged"
    print(f"{state} after {adp.iterations} iteration(s); final delta {adp.final_delta:.3e}")
    print(f"rank {last.rank}/{unknowns}; least-squares residual {last.residual:.3e}")
    if out:
        print(f"controller written to {out}")


def _iter_overrides(args) -> dict:
    kw = {}
    for name in ("crit", "epsilon", "max_iter"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    return kw


def cmd_solve_mb(args) -> int:
    pf = load_problem(args.problem)
    kw = _iter_overrides(args)
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.stride is not None:
        kw["stride"] = args.stride
    opts = replace(pf.options, **kw)
    d = args.degree or pf.d
    sol = solve_model_based(pf.problem, d, opts)
    ctl.save(sol.controller, args.out)
    _report(sol.adp, args.out)
    return EXIT_OK if sol.adp.converged else EXIT_ALGO


def cmd_solve_mf(args) -> int:
    R = ex.parse_numeric_matrix(args.R, args.m, args.m)
    q = ex.parse(args.q, args.n)
    opts = ModelFreeOptions(stride=args.stride, **_iter_overrides(args))
    sol = solve_model_free(args.data, q, R, args.degree, opts, n=args.n, m=args.m)
    ctl.save(sol.controller, args.out)
    _report(sol.adp, args.out)
    return EXIT_OK if sol.adp.converged else EXIT_ALGO


def cmd_simulate(args) -> int:
    pf = load_problem(args.problem)
    prob = pf.problem
    c = ctl.load(args.controller)
    if (c.n, c.m) != (prob.n, prob.m):
        raise ValueError(f"controller is for n={c.n}, m={c.m} but the problem has n={prob.n}, m={prob.m}")
    x0 = _vector(args.x0, prob.n, "--x0")
    res = ctl.simulate_closed_loop(prob.f_fn, prob.g_fn, c, x0, args.tf, args.dt, prob.q_fn, prob.R)
    print(f"x(tf) = {_fmt(res.x[-1])}")
    print(f"|x(tf)| = {np.linalg.norm(res.x[-1]):.6g}")
    if args.cost:
        print(f"J = {res.J:.10g}")
        print(f"tail integrand at tf = {res.tail:.3e}")
    if args.out:
        res.write_csv(args.out)
        print(f"trajectory written to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    c = ctl.load(args.controller)
    x = _vector(args.x, c.n, "--x")
    u = ctl.eval_control(c, x)
    print(f"u = {u[0]:.10g}" if u.size == 1 else f"u = {_fmt(u)}")
    print(f"V = {ctl.eval_value(c, x):.10g}")
    return EXIT_OK


def _with_suffix(path, d, many):
    if not path or not many:
        return path
    p = Path(path)
    return str(p.with_name(f"{p.stem}_d{d}{p.suffix}"))


def cmd_bench(args) -> int:
    degrees = args.degree or [1, 2, 3]
    many = len(degrees) > 1
    rows = []
    for d in degrees:
        row = run_benchmark(args.mode, d, args.seed, problem=args.problem)
        rows.append(row)
        if args.out:
            ctl.save(row.controller, _with_suffix(args.out, d, many))
        if args.trajectory:
            prob, x0, _ = _benchmark_setup(args.problem)
            res = ctl.simulate_closed_loop(prob.f_fn, prob.g_fn, row.controller, x0, COST_TF, COST_DT,
                                           prob.q_fn, prob.R)
            res.write_csv(_with_suffix(args.trajectory, d, many))
    print(format_table(rows))
    return EXIT_OK if all(r.converged for r in rows) else EXIT_ALGO


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    # show defaults, except where the help text already explains them
    def _get_help_string(self, action):
        text = action.help or ""
        if action.default is None or "default" in text:
            return text
        return super()._get_help_string(action)


def _add_iteration_flags(p):
    p.add_argument("--crit", type=int, choices=(0, 1, 2, 3), default=None,
                   help="stop criterion (default: 1, or the problem file's value)")
    p.add_argument("--epsilon", type=float, default=None,
                   help="stop tolerance (default: 1e-3, or the problem file's value)")
    p.add_argument("--max-iter", dest="max_iter", type=int, default=None,
                   help="iteration cap (default: 100, or the problem file's value)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adpt", description="Polynomial optimal feedback by adaptive "
                                 "dynamic programming (policy iteration on trajectory data).",
                                 formatter_class=_HelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    fmt = _HelpFormatter

    p = sub.add_parser("solve-mb", help="model-based solve from a problem file", formatter_class=fmt)
    p.add_argument("--problem", required=True, help="problem file")
    p.add_argument("--degree", type=int, default=None, help="controller degree d (default: [adp] d, else 1)")
    p.add_argument("--out", required=True, help="controller file to write")
    p.add_argument("--seed", type=int, default=None,
                   help=f"seed for random initial states and exploration (default: [adp] seed, else {DEFAULT_SEED})")
    p.add_argument("--stride", type=int, default=None, help="segments merged per equation (default: [adp] stride, else 1)")
    _add_iteration_flags(p)
    p.set_defaults(func=cmd_solve_mb)

    p = sub.add_parser("solve-mf", help="model-free solve from trajectory CSV", formatter_class=fmt)
    p.add_argument("--data", required=True, help="CSV with columns t,x1..xn,u0_1..u0_m,eta_1..eta_m[,traj]")
    p.add_argument("--n", type=int, required=True, help="state dimension")
    p.add_argument("--m", type=int, required=True, help="input dimension")
    p.add_argument("--q", required=True, help="state cost expression, e.g. '5*x1^2+3*x2^2'")
    p.add_argument("--R", required=True, help="input weight matrix literal, e.g. '1, 0; 0, 1'")
    p.add_argument("--degree", type=int, default=1, help="controller degree d")
    p.add_argument("--stride", type=int, default=1, help="sample intervals per equation")
    p.add_argument("--out", required=True, help="controller file to write")
    _add_iteration_flags(p)
    p.set_defaults(func=cmd_solve_mf)

    p = sub.add_parser("simulate", help="closed-loop rollout of a controller", formatter_class=fmt)
    p.add_argument("--problem", required=True, help="problem file")
    p.add_argument("--controller", required=True, help="controller file")
    p.add_argument("--x0", required=True, help="initial state, comma-separated (write --x0=-1,2 when it starts with '-')")
    p.add_argument("--tf", type=float, default=50.0, help="final time")
    p.add_argument("--dt", type=float, default=1e-3, help="RK4 step")
    p.add_argument("--cost", action="store_true", help="print the accumulated cost J")
    p.add_argument("--out", default=None, help="write the trajectory as CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="evaluate u(x) and V(x)", formatter_class=fmt)
    p.add_argument("--controller", required=True, help="controller file")
    p.add_argument("--x", required=True, help="state, comma-separated")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="built-in benchmark: cost at x0 and wall time", formatter_class=fmt)
    p.add_argument("problem", choices=("satellite", "scalar"), help="benchmark problem")
    p.add_argument("--mode", choices=("mb", "mf"), default="mb", help="model-based or model-free")
    p.add_argument("--degree", type=int, nargs="+", choices=(1, 2, 3), default=None,
                   help="degree(s) to run (default: 1 2 3)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="exploration seed")
    p.add_argument("--out", default=None,
                   help="controller file; with several degrees '_d<D>' is inserted before the extension")
    p.add_argument("--trajectory", default=None,
                   help="closed-loop CSV from x0 (same naming rule as --out)")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ALGO_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ALGO
    except INPUT_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
