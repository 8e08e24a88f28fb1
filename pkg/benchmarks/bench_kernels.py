"""Compiled vs numpy scoring kernels.

    python benchmarks/bench_kernels.py [--n 20000] [--m 16] [--K 64]

Prints seconds per test vector for each backend and the speedup, and checks
that both backends return the same scores.
"""

import argparse
import time

import numpy as np

from offgrid import kernels
from offgrid.numerics import rng_stream


def best_of(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def unit_rows(rng, n, m):
    X = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--m", type=int, default=16)
    ap.add_argument("--K", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=7)
    args = ap.parse_args()

    rng = rng_stream(0, "bench")
    U = unit_rows(rng, args.n, args.m)
    V = unit_rows(rng, args.K, args.m)
    W = unit_rows(rng, args.n, args.m)
    impls = kernels.backends()
    print(f"default backend: {kernels.BACKEND}; n={args.n} m={args.m} K={args.K}")

    results = {}
    for name, impl in impls.items():
        results[name] = {
            "scan_max": best_of(lambda: impl.scan_max(U, V), args.repeats) / args.n,
            "row_energy": best_of(lambda: impl.row_energy(U, W), args.repeats) / args.n,
        }
    print(f"{'kernel':<12}" + "".join(f"{n + ' [s/vec]':>20}" for n in impls) + "     speedup")
    for kernel in ("scan_max", "row_energy"):
        line = f"{kernel:<12}" + "".join(f"{results[n][kernel]:20.3e}" for n in impls)
        if "cython" in results:
            line += f"  {results['python'][kernel] / results['cython'][kernel]:9.2f}x"
        print(line)

    if "cython" in impls:
        a, b = impls["cython"].scan_max(U, V), impls["python"].scan_max(U, V)
        diff = max(np.max(np.abs(a[0] - b[0])),
                   np.max(np.abs(impls["cython"].row_energy(U, W) - impls["python"].row_energy(U, W))))
        print(f"max |cython - python| = {diff:.2e}")
    else:
        print("compiled backend not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
