#!/usr/bin/env python3
"""Timing comparison of the compiled kernels against the numpy fallback.

Workloads mirror the engine's hot paths: the explicit backward march at the
default pricing resolution (single row and a nested parameter block) and the
pathwise bilinear field reads used by decomposition extraction.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from gexpect import _core_py as reference
from gexpect import kernels

try:
    from gexpect import _core as compiled
except ImportError:
    compiled = None


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_march(impl, n_rows, n_x, n_steps, repeat):
    rng = np.random.default_rng(0)
    base = np.ascontiguousarray(rng.standard_normal((n_rows, n_x)))
    steps = np.array([n_steps], dtype=np.intp)
    out = np.empty((1, n_rows, n_x))
    dx = 16.0 / (n_x - 1)
    dt = 0.8 * dx * dx / 2.0

    def run():
        work = base.copy()
        kernels.march_explicit_1d(work, 1.0, 2.0, dt, dx, n_steps, steps,
                                  out, impl=impl)

    return _time(run, repeat)


def bench_read(impl, n_queries, n_t, n_x, repeat):
    rng = np.random.default_rng(1)
    times = np.linspace(0.0, 1.0, n_t)
    field = np.ascontiguousarray(rng.standard_normal((n_t, n_x)))
    qt = rng.uniform(0.0, 1.0, n_queries)
    qx = rng.uniform(-8.0, 8.0, n_queries)

    def run():
        kernels.bilinear_read(times, -8.0, 16.0 / (n_x - 1), field, qt, qx,
                              impl=impl)

    return _time(run, repeat)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    cases = [
        ("march 1 row, n_x=401, 1563 steps",
         lambda impl: bench_march(impl, 1, 401, 1563, args.repeat)),
        ("march 401 rows, n_x=401, 782 steps",
         lambda impl: bench_march(impl, 401, 401, 782, args.repeat)),
        ("bilinear read, 1e6 queries, field 1564x401",
         lambda impl: bench_read(impl, 1_000_000, 1564, 401, args.repeat)),
    ]
    print(f"{'workload':44s} {'reference':>11s} {'compiled':>11s} {'speedup':>8s}")
    for label, bench in cases:
        ref = bench(reference)
        if compiled is None:
            print(f"{label:44s} {ref * 1e3:9.1f}ms {'n/a':>11s} {'n/a':>8s}")
            continue
        com = bench(compiled)
        print(f"{label:44s} {ref * 1e3:9.1f}ms {com * 1e3:9.1f}ms "
              f"{ref / com:7.1f}x")
    if compiled is None:
        print("\ncompiled kernel not built; showing the fallback only")


if __name__ == "__main__":
    main()
