"""Command-line entry point: ``qcqpnet {gen,solve,oracle,sweep,points}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict

import numpy as np

from .errors import FactorizationError, InfeasibleError
from .geometry import _psi, cube_to_sphere
from .harness import SAMPLERS, ExperimentConfig, exact_solution, generate_problem, run_sweep, solve_pipeline
from .linearizer import QcqpProblem, default_n_points
from .nets import NetConfig, _philox, _write_points_csv, net_block
from .oracle import solve_exact_bisection, solve_grid_bruteforce
from .qpsolver import SolverConfig, write_trace

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3
EXIT_INFEASIBLE = 4

log = logging.getLogger("qcqpnet")


def _emit(obj: dict, out: str | None) -> None:
    text = json.dumps(obj, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _solver_config(args) -> SolverConfig:
    return SolverConfig(
        eps_abs=args.eps_abs,
        eps_rel=args.eps_rel,
        max_iter=args.max_iter,
        trace=bool(getattr(args, "trace", None)),
    )


def _cmd_gen(args) -> int:
    p = generate_problem(args.n, args.seed, box=not args.no_box)
    if args.out:
        p.to_json(args.out)
    else:
        print(json.dumps(p.to_dict()))
    return EXIT_OK


def _cmd_solve(args) -> int:
    p = QcqpProblem.from_json(args.problem)
    N = args.N or default_n_points(p.n)
    exact = exact_solution(p) if args.exact else None
    report, row = solve_pipeline(p, args.sampler, N, _solver_config(args), args.seed, exact)
    if args.trace:
        write_trace(report, args.trace)
    _emit(
        {
            "x": report.x.tolist(),
            "objective": report.objective,
            "status": report.status,
            "iterations": report.iterations,
            "primal_residual": report.primal_residual,
            "dual_residual": report.dual_residual,
            "wall_time": report.wall_time,
            "metrics": asdict(row),
        },
        args.out,
    )
    if report.status == "infeasible-detected":
        return EXIT_INFEASIBLE
    if report.status != "optimal":
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_oracle(args) -> int:
    p = QcqpProblem.from_json(args.problem)
    if args.method == "bisection":
        sol = solve_exact_bisection(p)
    elif args.method == "grid":
        sol = solve_grid_bruteforce(p, resolution=args.resolution, levels=args.levels)
    else:
        sol = exact_solution(p)
        if sol is None:
            raise ValueError("no exact oracle applies to this problem (box with n > 3)")
    _emit(
        {
            "x": sol.x_star.tolist(),
            "lambda": sol.lambda_star,
            "objective": sol.objective,
            "active": sol.active,
            "error_bound": sol.error_bound,
        },
        args.out,
    )
    return EXIT_OK


def _cmd_sweep(args) -> int:
    with open(args.config) as fh:
        d = json.load(fh)
    if args.out:
        d["out"] = args.out
    path = run_sweep(ExperimentConfig.from_dict(d))
    print(path)
    return EXIT_OK


def _cmd_points(args) -> int:
    if args.problem:
        p = QcqpProblem.from_json(args.problem)
    else:
        p = generate_problem(args.n, args.seed, box=False)
    e = p.ellipsoids[0]
    n, N = e.n, args.N
    if args.sampler == "net":
        m = N.bit_length() - 1
        if 2**m != N:
            raise ValueError(f"net sampler needs a power of two, got N={N}")
        Y = net_block(NetConfig(m=m, s=n - 1))
    elif args.sampler == "uniform-cube":
        Y = _philox(args.seed, 11).random((N, n - 1))
    else:
        Y = None
    if Y is not None:
        _write_points_csv(f"{args.out}_cube.csv", Y)
        U = cube_to_sphere(Y)
    else:
        Z = _philox(args.seed, 11).standard_normal((N, n))
        U = Z / np.linalg.norm(Z, axis=1)[:, None]
    _write_points_csv(f"{args.out}_sphere.csv", U)
    _write_points_csv(f"{args.out}_ellipsoid.csv", _psi(U, e))
    print(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcqpnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a random problem as JSON")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--no-box", action="store_true")
    g.add_argument("--out")
    g.set_defaults(func=_cmd_gen)

    s = sub.add_parser("solve", help="linearize and solve a problem JSON")
    s.add_argument("problem")
    s.add_argument("--N", type=int, help="boundary points (default: max(1024, 2^m) with 2^m >= 10 n)")
    s.add_argument("--sampler", choices=SAMPLERS, default="net")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--eps-abs", type=float, default=1e-6)
    s.add_argument("--eps-rel", type=float, default=1e-6)
    s.add_argument("--max-iter", type=int, default=20000)
    s.add_argument("--exact", action="store_true", help="also compute oracle metrics")
    s.add_argument("--trace", help="write a per-iteration CSV here")
    s.add_argument("--out")
    s.set_defaults(func=_cmd_solve)

    o = sub.add_parser("oracle", help="exact solve of a single-ellipsoid problem")
    o.add_argument("problem")
    o.add_argument("--method", choices=("auto", "bisection", "grid"), default="auto")
    o.add_argument("--resolution", type=int, default=2001)
    o.add_argument("--levels", type=int, default=1)
    o.add_argument("--out")
    o.set_defaults(func=_cmd_oracle)

    w = sub.add_parser("sweep", help="run an experiment config JSON into a CSV")
    w.add_argument("config")
    w.add_argument("--out")
    w.set_defaults(func=_cmd_sweep)

    pt = sub.add_parser("points", help="write cube, sphere and ellipsoid point CSVs")
    pt.add_argument("--n", type=int, default=3)
    pt.add_argument("--N", type=int, default=1024)
    pt.add_argument("--sampler", choices=SAMPLERS, default="net")
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--problem", help="take the ellipsoid from this problem JSON")
    pt.add_argument("--out", default="points")
    pt.set_defaults(func=_cmd_points)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except FactorizationError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
