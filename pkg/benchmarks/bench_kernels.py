"""Time the hot kernels on both backends and check they agree.

Run:  python benchmarks/bench_kernels.py [--repeats N] [--scale F]

The numba variants are JIT-warmed before timing.  When numba is missing or
disabled via COPYCART_NO_NUMBA=1, its column reports the undecorated python
source of the kernels, which is the worst case, not the shipped fallback;
the numpy column is always the real fallback path.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from copycart import _kernels as K


def timed(fn, *args, repeats=5):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, result


def bench_counter_indices(scale, repeats):
    n_draws = int(1_000_000 * scale)
    args = (12345, 0, n_draws, 50_000)
    return f"counter_indices ({n_draws:,} draws)", args, (
        K.counter_indices_numpy, K.counter_indices_numba)


def bench_bootstrap(scale, repeats):
    rng = np.random.default_rng(0)
    n = int(50_000 * scale)
    o_t = (rng.random(n) < 0.35).astype(np.uint8)
    o_c = (rng.random(n) < 0.20).astype(np.uint8)
    args = (o_t, o_c, 1000, 42)
    return f"bootstrap_paired_counts ({n:,} pairs x 1000 reps)", args, (
        K.bootstrap_paired_counts_numpy, K.bootstrap_paired_counts_numba)


def bench_match(scale, repeats):
    rng = np.random.default_rng(1)
    n_strata = int(2_000 * scale)
    nt, nc = 25, 50
    t_start = np.arange(n_strata + 1, dtype=np.int64) * nt
    c_start = np.arange(n_strata + 1, dtype=np.int64) * nc
    t_pop = rng.random(n_strata * nt)
    c_pop = rng.random(n_strata * nc)
    args = (t_start, c_start, t_pop, c_pop, 0.10, True)
    return f"greedy_caliper_match ({n_strata:,} strata, {nt}t/{nc}c)", args, (
        K.greedy_caliper_match_numpy, K.greedy_caliper_match_numba)


def bench_best_split(scale, repeats):
    rng = np.random.default_rng(2)
    n = int(200_000 * scale)
    x = np.sort(rng.random(n))
    y = (rng.random(n) < 0.5).astype(np.uint8)
    args = (x, y)
    return f"best_split ({n:,} sorted values)", args, (
        K.best_split_numpy, K.best_split_numba)


def agree(a, b) -> bool:
    if isinstance(a, tuple):
        return all(agree(x, y) for x, y in zip(a, b))
    return bool(np.array_equal(np.asarray(a), np.asarray(b)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0,
                    help="shrink or grow every problem size")
    opts = ap.parse_args()

    print(f"backend selected at import: {K.BACKEND}")
    header = f"{'kernel':52s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s} {'agree':>6s}"
    print(header)
    print("-" * len(header))
    for bench in (bench_counter_indices, bench_bootstrap, bench_match, bench_best_split):
        name, args, (fn_np, fn_nb) = bench(opts.scale, opts.repeats)
        fn_nb(*args)  # JIT warm-up (no-op on the python fallback)
        t_np, r_np = timed(fn_np, *args, repeats=opts.repeats)
        t_nb, r_nb = timed(fn_nb, *args, repeats=opts.repeats)
        ok = agree(r_np, r_nb)
        print(f"{name:52s} {t_np * 1e3:9.1f}ms {t_nb * 1e3:9.1f}ms "
              f"{t_np / t_nb:7.1f}x {'yes' if ok else 'NO':>6s}")
        if not ok:
            raise SystemExit(f"backend disagreement in {name}")


if __name__ == "__main__":
    main()
