"""Hot numeric kernels with two interchangeable backends.

Three inner loops dominate pipeline runtime: bootstrap resampling of matched
pairs, greedy caliper matching inside exact-key strata, and the split search
of the decision-tree trainer.  Each kernel exists twice: a scalar-loop version
compiled with numba, and a vectorized pure-numpy fallback.  Set
``COPYCART_NO_NUMBA=1`` (or install without numba) to force the fallback.

Both backends must produce bit-identical results; the test suite asserts
parity.  To keep that guarantee the kernels avoid any backend-specific
randomness: resampling indices come from a counter-based splitmix64 generator
evaluated with identical 64-bit integer arithmetic on both paths, and all
floating-point expressions are written so the two backends execute the same
IEEE operations in the same order.
"""

from __future__ import annotations

import os

import numpy as np

# splitmix64 constants
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK64 = (1 << 64) - 1

_env = os.environ.get("COPYCART_NO_NUMBA", "").strip()
_numba_requested = _env in ("", "0", "false", "no")

try:  # pragma: no cover - exercised via both-backend test runs
    if not _numba_requested:
        raise ImportError("numba disabled by COPYCART_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        # keep the undecorated function importable for benchmarks/tests
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# counter-based RNG (splitmix64)
# ---------------------------------------------------------------------------

def _mix64_np(z: np.ndarray) -> np.ndarray:
    """Finalizer of splitmix64 on a uint64 array (wrapping arithmetic)."""
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def counter_indices_numpy(seed: int, start: int, count: int, n: int) -> np.ndarray:
    """Indices in [0, n) for counters start..start+count-1 (fallback path)."""
    ctr = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    z = _mix64_np(np.uint64(seed & _MASK64) + ctr * np.uint64(_GOLDEN))
    return (((z >> np.uint64(32)) * np.uint64(n)) >> np.uint64(32)).astype(np.int64)


@njit(cache=True)
def _counter_indices_nb(seed, start, count, n):  # pragma: no cover - jit
    out = np.empty(count, np.int64)
    g = np.uint64(_GOLDEN)
    m1 = np.uint64(_MIX1)
    m2 = np.uint64(_MIX2)
    su = np.uint64(seed)
    un = np.uint64(n)
    for i in range(count):
        z = su + np.uint64(start + i + 1) * g
        z = (z ^ (z >> np.uint64(30))) * m1
        z = (z ^ (z >> np.uint64(27))) * m2
        z = z ^ (z >> np.uint64(31))
        out[i] = np.int64(((z >> np.uint64(32)) * un) >> np.uint64(32))
    return out


def counter_indices_numba(seed: int, start: int, count: int, n: int) -> np.ndarray:
    return _counter_indices_nb(np.uint64(seed & _MASK64), start, count, n)


# ---------------------------------------------------------------------------
# bootstrap resampling of paired binary outcomes
# ---------------------------------------------------------------------------

def bootstrap_paired_counts_numpy(
    o_t: np.ndarray, o_c: np.ndarray, n_rep: int, seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Resample (treated, control) outcome pairs with replacement.

    Returns per-replicate discordance counts (n11, n10, n01); n00 follows
    from the pair total.  Replicate b draws index i via splitmix64 at
    counter b*n + i, so results do not depend on the backend.
    """
    n = o_t.shape[0]
    n11 = np.empty(n_rep, np.int64)
    n10 = np.empty(n_rep, np.int64)
    n01 = np.empty(n_rep, np.int64)
    ot = o_t.astype(np.int64)
    oc = o_c.astype(np.int64)
    base = np.arange(1, n + 1, dtype=np.uint64)
    su = np.uint64(seed & _MASK64)
    g = np.uint64(_GOLDEN)
    un = np.uint64(n)
    for b in range(n_rep):
        ctr = base + np.uint64(b * n)
        z = _mix64_np(su + ctr * g)
        j = ((z >> np.uint64(32)) * un) >> np.uint64(32)
        tj = ot[j]
        cj = oc[j]
        s11 = int(np.sum(tj & cj))
        n11[b] = s11
        n10[b] = int(tj.sum()) - s11
        n01[b] = int(cj.sum()) - s11
    return n11, n10, n01


@njit(cache=True)
def _bootstrap_nb(o_t, o_c, n_rep, seed):  # pragma: no cover - jit
    n = o_t.shape[0]
    n11 = np.empty(n_rep, np.int64)
    n10 = np.empty(n_rep, np.int64)
    n01 = np.empty(n_rep, np.int64)
    g = np.uint64(_GOLDEN)
    m1 = np.uint64(_MIX1)
    m2 = np.uint64(_MIX2)
    su = np.uint64(seed)
    un = np.uint64(n)
    for b in range(n_rep):
        s11 = 0
        st = 0
        sc = 0
        for i in range(n):
            z = su + np.uint64(b * n + i + 1) * g
            z = (z ^ (z >> np.uint64(30))) * m1
            z = (z ^ (z >> np.uint64(27))) * m2
            z = z ^ (z >> np.uint64(31))
            j = np.int64(((z >> np.uint64(32)) * un) >> np.uint64(32))
            t = o_t[j]
            c = o_c[j]
            st += t
            sc += c
            s11 += t & c
        n11[b] = s11
        n10[b] = st - s11
        n01[b] = sc - s11
    return n11, n10, n01


def bootstrap_paired_counts_numba(
    o_t: np.ndarray, o_c: np.ndarray, n_rep: int, seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return _bootstrap_nb(o_t, o_c, n_rep, np.uint64(seed & _MASK64))


# ---------------------------------------------------------------------------
# greedy 1:1 caliper matching within pre-built strata
# ---------------------------------------------------------------------------
#
# Treated and control dyads arrive flattened and grouped by stratum:
# slice s is t_pop[t_start[s]:t_start[s+1]] / c_pop[c_start[s]:c_start[s+1]].
# Within a stratum the caller has already ordered treated rows by their
# processing key and control rows by the tie-break key, so "first minimal
# distance in scan order" is the deterministic winner on both backends.

def greedy_caliper_match_numpy(
    t_start: np.ndarray,
    c_start: np.ndarray,
    t_pop: np.ndarray,
    c_pop: np.ndarray,
    caliper: float,
    relative: bool,
) -> np.ndarray:
    out = np.full(t_pop.shape[0], -1, np.int64)
    used = np.zeros(c_pop.shape[0], bool)
    for s in range(t_start.shape[0] - 1):
        c0 = int(c_start[s])
        c1 = int(c_start[s + 1])
        if c1 == c0:
            continue
        cp = c_pop[c0:c1]
        u = used[c0:c1]
        for i in range(int(t_start[s]), int(t_start[s + 1])):
            pt = t_pop[i]
            d = np.abs(pt - cp)
            if relative:
                m = np.maximum(pt, cp)
                safe = np.where(m > 0.0, m, 1.0)
                ok = np.where(m > 0.0, d / safe <= caliper, d == 0.0)
            else:
                ok = d <= caliper
            ok &= ~u
            if not ok.any():
                continue
            j = int(np.argmin(np.where(ok, d, np.inf)))
            u[j] = True
            out[i] = c0 + j
    return out


@njit(cache=True)
def _match_nb(t_start, c_start, t_pop, c_pop, caliper, relative):  # pragma: no cover - jit
    out = np.full(t_pop.shape[0], -1, np.int64)
    used = np.zeros(c_pop.shape[0], np.uint8)
    for s in range(t_start.shape[0] - 1):
        c0 = c_start[s]
        c1 = c_start[s + 1]
        for i in range(t_start[s], t_start[s + 1]):
            pt = t_pop[i]
            best = np.int64(-1)
            bestd = np.inf
            for j in range(c0, c1):
                if used[j] == 1:
                    continue
                pc = c_pop[j]
                d = abs(pt - pc)
                if relative:
                    m = pt if pt > pc else pc
                    if m > 0.0:
                        if d / m > caliper:
                            continue
                    elif d != 0.0:
                        continue
                else:
                    if d > caliper:
                        continue
                if d < bestd:
                    bestd = d
                    best = j
            if best >= 0:
                used[best] = 1
                out[i] = best
    return out


def greedy_caliper_match_numba(
    t_start: np.ndarray,
    c_start: np.ndarray,
    t_pop: np.ndarray,
    c_pop: np.ndarray,
    caliper: float,
    relative: bool,
) -> np.ndarray:
    return _match_nb(t_start, c_start, t_pop, c_pop, caliper, relative)


# ---------------------------------------------------------------------------
# decision-tree split search
# ---------------------------------------------------------------------------
#
# Inputs are one feature column sorted ascending with the binary labels
# carried along.  The score maximized is sum_side (n_side1^2 + n_side0^2) /
# n_side, an affine transform of the negated weighted Gini impurity; counts
# are exact integers so both backends compute identical floats.

def best_split_numpy(x: np.ndarray, y: np.ndarray) -> tuple[float, int]:
    n = x.shape[0]
    if n < 2:
        return (-np.inf, -1)
    c1 = np.cumsum(y[:-1], dtype=np.int64)
    nl = np.arange(1, n, dtype=np.int64)
    l0 = nl - c1
    tot1 = int(np.sum(y, dtype=np.int64))
    tot0 = n - tot1
    r1 = tot1 - c1
    r0 = tot0 - l0
    nr = n - nl
    score = (c1 * c1 + l0 * l0) / nl + (r1 * r1 + r0 * r0) / nr
    score = np.where(x[:-1] < x[1:], score, -np.inf)
    i = int(np.argmax(score))
    if not np.isfinite(score[i]):
        return (-np.inf, -1)
    return (float(score[i]), i)


@njit(cache=True)
def _best_split_nb(x, y):  # pragma: no cover - jit
    n = x.shape[0]
    tot1 = 0
    for i in range(n):
        tot1 += y[i]
    tot0 = n - tot1
    best = -np.inf
    besti = np.int64(-1)
    l1 = 0
    for i in range(n - 1):
        l1 += y[i]
        if not x[i] < x[i + 1]:
            continue
        nl = i + 1
        nr = n - nl
        l0 = nl - l1
        r1 = tot1 - l1
        r0 = tot0 - l0
        score = (l1 * l1 + l0 * l0) / nl + (r1 * r1 + r0 * r0) / nr
        if score > best:
            best = score
            besti = i
    return best, besti


def best_split_numba(x: np.ndarray, y: np.ndarray) -> tuple[float, int]:
    score, i = _best_split_nb(x, y)
    return (float(score), int(i))


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    counter_indices = counter_indices_numba
    bootstrap_paired_counts = bootstrap_paired_counts_numba
    greedy_caliper_match = greedy_caliper_match_numba
    best_split = best_split_numba
else:
    counter_indices = counter_indices_numpy
    bootstrap_paired_counts = bootstrap_paired_counts_numpy
    greedy_caliper_match = greedy_caliper_match_numpy
    best_split = best_split_numpy
