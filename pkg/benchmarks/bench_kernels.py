"""Compare the numba and numpy kernel paths.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--quick]

Both paths must return identical states; the script checks that before
reporting timings. The first numba call per kernel is a warm-up (JIT or cache
load) and is excluded.
"""
import argparse
import os
import time

import numpy as np

from qmot import kernels
from qmot.pipeline import generate_scenario
from qmot.qubo import Qubo, apply_penalties, build_constraints, build_cost
from qmot.sampler import AnnealSchedule

FLAG = "QMOT_DISABLE_NUMBA"


def timed(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def on_path(path, fn):
    if path == "numpy":
        os.environ[FLAG] = "1"
    else:
        os.environ.pop(FLAG, None)
    try:
        return fn()
    finally:
        os.environ.pop(FLAG, None)


def anneal_case(reads, sweeps):
    sc = generate_scenario(3, 5, 0.6, seed=0, num_real_tracks=3)
    spec = sc.spec
    q = apply_penalties(build_cost(spec), build_constraints(spec, 1.0))
    W, h = q.couplings()
    temps = AnnealSchedule(sweeps=sweeps).temperatures(W, h)
    seeds = kernels.read_seeds(0, reads)
    return f"anneal n={q.n} reads={reads} sweeps={sweeps}", lambda: kernels.anneal_binary(W, h, temps, seeds)


def brute_case(n):
    rng = np.random.default_rng(0)
    q = Qubo(np.triu(rng.normal(size=(n, n))), rng.normal(size=n))
    W, h = q.couplings()
    return f"enumerate n={n}", lambda: kernels.enumerate_minima(W, h, 0.0, 1e-9)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="smaller problems")
    args = ap.parse_args()

    cases = [anneal_case(256 if args.quick else 1024, 200 if args.quick else 1000),
             brute_case(16 if args.quick else 20)]
    print(f"{'case':<40} {'numba s':>10} {'numpy s':>10} {'speedup':>8}")
    for name, fn in cases:
        on_path("numba", fn)  # warm-up
        t_nb, r_nb = on_path("numba", lambda: timed(fn, args.repeat))
        t_np, r_np = on_path("numpy", lambda: timed(fn, args.repeat))
        if isinstance(r_nb, tuple):
            same = np.isclose(r_nb[0], r_np[0]) and np.array_equal(r_nb[1], r_np[1])
        else:
            same = np.array_equal(r_nb, r_np)
        if not same:
            raise SystemExit(f"{name}: numba and numpy paths disagree")
        print(f"{name:<40} {t_nb:>10.3f} {t_np:>10.3f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
