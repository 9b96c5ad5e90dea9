"""Compare the compiled and the NumPy path-following kernels.

Runs the same strict-mode path segment with each backend, checks that
both land on the same iterate, and prints iterations per second::

    python benchmarks/bench_kernels.py [--iters 20000] [--repeat 3]
"""
import argparse
import time

import numpy as np

from kflow import kernels
from kflow.instance import augment_initial
from kflow.ipm import IpmParameters, Iterate, PathTrace, run_path
from kflow.solver import generate_instance

SHAPES = [(3, 4, 1), (6, 12, 2), (10, 30, 2)]


def segment(shape, iters):
    n, m, k = shape
    inst = generate_instance(n, m, k, 5, 5, seed=0)
    aug, x0, y0, s0 = augment_initial(inst, 0.1)
    lp = aug.lp_art()
    params = IpmParameters.for_size(lp.nvars, mode="strict")
    t_end = (1.0 - params.h) ** iters
    return lp, Iterate(x0, s0, 1.0, y0), t_end, params


def timed(backend, lp, start, t_end, params, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        trace = PathTrace()
        t0 = time.perf_counter()
        out = run_path("direct", lp, start, t_end, params, trace=trace,
                       backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, trace.iterations, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iters", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    try:
        kernels.get_backend("cython")
    except ImportError:
        raise SystemExit("compiled kernels are not built; run "
                         "`pip install -e . --no-build-isolation` first")
    print(f"{'n':>3} {'m':>3} {'k':>2} {'iters':>7} {'python it/s':>12} "
          f"{'cython it/s':>12} {'speedup':>8} {'max |dx|':>9}")
    for shape in SHAPES:
        lp, start, t_end, params = segment(shape, args.iters)
        tp, iters, xp = timed("python", lp, start, t_end, params,
                              args.repeat)
        tc, _, xc = timed("cython", lp, start, t_end, params, args.repeat)
        diff = float(np.abs(xp.x - xc.x).max())
        print(f"{shape[0]:>3} {shape[1]:>3} {shape[2]:>2} {iters:>7} "
              f"{iters / tp:>12.0f} {iters / tc:>12.0f} {tp / tc:>8.1f} "
              f"{diff:>9.1e}")


if __name__ == "__main__":
    main()
