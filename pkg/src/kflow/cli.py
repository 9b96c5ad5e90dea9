"""``kflow`` command line: ``solve``, ``verify`` and ``gen``.

Exit codes: 0 success, 1 a check failed (or the solver broke down
numerically), 2 invalid input, 3 iteration cap reached.
"""
from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from .errors import (DimensionMismatch, IterationCapExceeded, KFlowError,
                     ParseError,
                     ValidationError)
from .instance import reduce_full_rank
from .io import (RunReport, format_instance, format_solution, parse_instance,
                 parse_solution)
from .solver import (SolveConfig, generate_instance, solve_mincost,
                     solve_throughput, verify_certificate)

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_CAP = 0, 1, 2, 3


def _pairs(text):
    out = []
    for item in text.split(","):
        try:
            a, b = item.split(":")
            out.append((int(a), int(b)))
        except ValueError:
            raise argparse.ArgumentTypeError(
                f"bad pair {item!r}, expected s:t") from None
    return out


def _positive_float(text):
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return val


def build_parser():
    p = argparse.ArgumentParser(
        prog="kflow", description="k-commodity flow by path following")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve an instance file")
    s.add_argument("instance", help="instance file ('-' for stdin)")
    s.add_argument("--mode", choices=("mincost", "throughput"),
                   default="mincost")
    s.add_argument("--engine", choices=("direct", "maintained"),
                   default="direct")
    s.add_argument("--eps", type=_positive_float, default=1e-4)
    s.add_argument("--ipm", choices=("strict", "practical"),
                   default="practical")
    s.add_argument("--max-iters", type=int, default=5_000_000)
    s.add_argument("--pairs", type=_pairs,
                   help="throughput pairs s1:t1,s2:t2,...")
    s.add_argument("--report", choices=("json", "text"), default="text")
    s.add_argument("--solution", metavar="FILE",
                   help="also write the flows (and dual) to FILE")

    v = sub.add_parser("verify", help="check a solution file")
    v.add_argument("instance")
    v.add_argument("solution")
    v.add_argument("--eps", type=_positive_float, default=1e-4)

    g = sub.add_parser("gen", help="print a random feasible instance")
    for name in ("n", "m", "k", "U", "C"):
        g.add_argument(name, type=int)
    g.add_argument("--seed", type=int, default=0)
    return p


def _read(path):
    if path == "-":
        return sys.stdin.read()
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def cmd_solve(args, out):
    inst = parse_instance(_read(args.instance))
    cfg = SolveConfig(eps=args.eps, engine=args.engine, mode=args.ipm,
                      max_iterations=args.max_iters)
    start = time.perf_counter()
    if args.mode == "throughput":
        if not args.pairs:
            raise ValidationError("throughput mode needs --pairs")
        sol = solve_throughput(inst.graph, inst.capacities, args.pairs, cfg)
    else:
        sol = solve_mincost(inst, cfg)
    wall = time.perf_counter() - start
    report = RunReport.from_solution(inst, cfg, sol, wall, cfg.eps)
    out.write(report.to_json() + "\n" if args.report == "json"
              else report.to_text())
    if args.solution:
        dual = sol.dual if args.mode == "mincost" else None
        with open(args.solution, "w", encoding="utf-8") as fh:
            fh.write(format_solution(sol.flows, sol.objective, dual))
    return EXIT_OK if report.passed else EXIT_FAIL


def verify_files(inst, sol, eps):
    """Checks a solution against an instance; returns a dict of results."""
    lp = reduce_full_rank(inst)
    flows = sol.flows
    slack = inst.capacities - flows.sum(axis=0)
    x = np.concatenate([flows.reshape(-1), slack])
    y = sol.dual if sol.dual is not None else np.zeros(lp.ncons)
    if y.shape != (lp.ncons,):
        raise ValidationError("dual certificate has the wrong length")
    s = lp.c - lp.dual_lhs(y)
    cert = verify_certificate(lp, x, y, s, eps)
    objective = float((inst.costs * flows).sum())
    res = cert.as_dict()
    res["objective"] = objective
    res["objective_matches"] = (
        sol.objective is None
        or abs(objective - sol.objective) <= 1e-9 * max(1.0, abs(objective)))
    res["passed"] = bool(cert.passed and res["objective_matches"])
    return res


def cmd_verify(args, out):
    inst = parse_instance(_read(args.instance))
    ncons = inst.k * (inst.n - 1) + inst.m
    sol = parse_solution(_read(args.solution), inst.k, inst.m, ncons)
    res = verify_files(inst, sol, args.eps)
    for key in sorted(res):
        val = res[key]
        val = ("true" if val else "false") if isinstance(val, bool) else val
        out.write(f"{key} {val}\n")
    return EXIT_OK if res["passed"] else EXIT_FAIL


def cmd_gen(args, out):
    inst = generate_instance(args.n, args.m, args.k, args.U, args.C,
                             seed=args.seed)
    out.write(format_instance(inst))
    return EXIT_OK


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    handler = {"solve": cmd_solve, "verify": cmd_verify, "gen": cmd_gen}
    try:
        return handler[args.command](args, out)
    except (ParseError, ValidationError, DimensionMismatch, OSError) as exc:
        print(f"kflow: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except IterationCapExceeded as exc:
        print(f"kflow: {exc}", file=sys.stderr)
        return EXIT_CAP
    except KFlowError as exc:
        print(f"kflow: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
