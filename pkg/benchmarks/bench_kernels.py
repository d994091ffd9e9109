"""Compiled vs numpy scoring kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints best-of-N wall time per kernel and the max abs difference between backends.
"""
import argparse
import time

import numpy as np

from rcone import _kernels_py as py
from rcone.kernels import MODE_ANSWER, MODE_CANDIDATE

try:
    from rcone import _ckernels as cy
except ImportError:
    cy = None


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases(rng):
    for q, n, d in ((16, 1000, 24), (64, 5000, 24), (8, 2000, 400)):
        ent = rng.uniform(-np.pi, np.pi, (n, d))
        ax = rng.uniform(-np.pi, np.pi, (q, d))
        ri = rng.uniform(0, np.pi, (q, d))
        fu = rng.uniform(0, 2 * np.pi - ri)
        for mode, name in ((MODE_ANSWER, "answer"), (MODE_CANDIDATE, "candidate")):
            yield (f"distance {name} Q={q} N={n} d={d}", "cone_distance_matrix",
                   (ent, ax, ri, fu, mode, 0.02, 1.0))
    m = 200_000
    args = (rng.uniform(0, 2 * np.pi, m), rng.uniform(0, 2 * np.pi, m),
            rng.uniform(0, 2 * np.pi, m), rng.uniform(0, 2 * np.pi, m))
    yield f"arc_overlap n={m}", "arc_overlap", args


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ns = ap.parse_args(argv)
    if cy is None:
        print("compiled kernels not built; numpy timings only")
    print(f"{'case':42s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for label, fn, args in cases(np.random.default_rng(ns.seed)):
        tp, ref = best_of(lambda: getattr(py, fn)(*args), ns.repeat)
        if cy is None:
            print(f"{label:42s} {1e3 * tp:10.2f}")
            continue
        tc, got = best_of(lambda: getattr(cy, fn)(*args), ns.repeat)
        diff = float(np.max(np.abs(np.asarray(got) - ref)))
        print(f"{label:42s} {1e3 * tp:10.2f} {1e3 * tc:10.2f} {tp / tc:7.1f}x {diff:11.2e}")


if __name__ == "__main__":
    main()
