"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--n-walk 1000000] [--n-bm 4000] [--repeat 3]

Prints one line per kernel with the best-of-``repeat`` wall time for each
backend, the speed-up, and whether the two outputs agree.
"""

from __future__ import annotations

import argparse
import math
import time

import numpy as np

from rwrange import _fallback, kernels
from rwrange.brownian import TWO_PI, lag_weights, simulate_bm
from rwrange.stepdist import ref_walk, sample_codes


def best_time(fn, repeat):
    best, out = math.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(n_walk: int, n_bm: int):
    law = ref_walk()
    rng = np.random.default_rng(1)
    codes, cdx, cdy = sample_codes(law, rng, n_walk)
    cps = np.unique(np.linspace(1, n_walk, 8).astype(np.int64))
    yield "range_checkpoints", (codes, cdx, cdy, cps, False)

    lengths = rng.geometric(0.01, size=max(1, n_walk // 100)).astype(np.int64)
    many_codes, _, _ = sample_codes(law, rng, int(lengths.sum()))
    starts = np.r_[0, np.cumsum(lengths)[:-1]].astype(np.int64)
    yield "range_many", (many_codes, cdx, cdy, starts, lengths, True)

    h = 1.0 / n_bm
    W = np.ascontiguousarray(simulate_bm(h, 1.0, 2).values[:n_bm])
    eps = np.array([16 * h, 8 * h, 4 * h])
    lagw = np.stack([lag_weights(e / h, n_bm) for e in eps])
    inv2eps = 1.0 / (2 * eps)
    norm = 1.0 / (TWO_PI * eps)
    bcps = np.array([n_bm], dtype=np.int64)
    yield "alpha_dense", (W, inv2eps, norm, lagw, 3, bcps)
    cutoff = math.sqrt(36 * eps.max())
    yield "alpha_binned", (W, inv2eps, norm, lagw, 3, bcps, cutoff, 0.0, 0.0, True)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-walk", type=int, default=10**6)
    ap.add_argument("--n-bm", type=int, default=4000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    compiled = kernels.compiled()
    if compiled is None:
        print("compiled extension not built; only the fallback can run")
    print(f"{'kernel':<20}{'compiled s':>12}{'python s':>12}{'speed-up':>10}  agree")
    for name, call_args in cases(args.n_walk, args.n_bm):
        tp, outp = best_time(lambda: getattr(_fallback, name)(*call_args), args.repeat)
        if compiled is None:
            print(f"{name:<20}{'-':>12}{tp:>12.4f}{'-':>10}")
            continue
        tc, outc = best_time(lambda: getattr(compiled, name)(*call_args), args.repeat)
        agree = np.allclose(np.asarray(outc, float), np.asarray(outp, float), rtol=1e-10, atol=0)
        print(f"{name:<20}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.1f}  {agree}")


if __name__ == "__main__":
    main()
