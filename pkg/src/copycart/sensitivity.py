"""Sensitivity of the paired test to an unobserved binary confounder.

``worst_case_p`` bounds the one-sided McNemar p-value when an unobserved
covariate may multiply the within-pair treatment odds by up to gamma: the
discordant-pair successes are then at worst Binomial(D, gamma/(1+gamma)).
``gamma_star`` locates the largest gamma at which significance survives, and
the amplification map factors a gamma into (lambda, delta) pairs via
gamma = (lambda*delta + 1)/(lambda + delta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import NoPairsError, SensitivityDomainError
from .estimate import PairedCounts

EXACT_MAX_DISCORDANT = 200


def _binom_upper_tail(k: int, n: int, q: float) -> float:
    """P(Bin(n, q) >= k), exact float summation (n <= a few hundred)."""
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    terms = [math.comb(n, i) * q**i * (1.0 - q) ** (n - i) for i in range(k, n + 1)]
    return min(1.0, math.fsum(terms))


def _binom_upper_tail_normal(k: int, n: int, q: float) -> float:
    """Normal approximation with continuity correction."""
    mean = n * q
    sd = math.sqrt(n * q * (1.0 - q))
    if sd == 0.0:
        return 1.0 if k <= mean else 0.0
    z = (k - 0.5 - mean) / sd
    return max(0.0, min(1.0, 0.5 * math.erfc(z / math.sqrt(2.0))))


def worst_case_p(counts: PairedCounts, gamma: float, two_sided: bool = False) -> float:
    """Upper bound on the McNemar p-value at hidden-bias level gamma.

    One-sided in the direction of the observed excess; exact binomial tail
    up to 200 discordant pairs, normal approximation above.
    """
    if gamma < 1.0:
        raise SensitivityDomainError(f"gamma must be >= 1, got {gamma}")
    d = counts.discordant
    if d == 0:
        raise NoPairsError("sensitivity undefined without discordant pairs")
    k = max(counts.n10, counts.n01)
    q = gamma / (1.0 + gamma)
    if d <= EXACT_MAX_DISCORDANT:
        p = _binom_upper_tail(k, d, q)
    else:
        p = _binom_upper_tail_normal(k, d, q)
    if two_sided:
        p = min(1.0, 2.0 * p)
    return p


@dataclass(frozen=True)
class GammaStar:
    value: float
    alpha: float
    baseline_significant: bool
    capped: bool = False

    def __float__(self) -> float:
        return self.value


def gamma_star(
    counts: PairedCounts,
    alpha: float = 0.05,
    gamma_max: float = 100.0,
    tol: float = 1e-3,
) -> GammaStar:
    """Largest gamma in [1, gamma_max] keeping worst_case_p <= alpha.

    If the test is not significant even without hidden bias the sentinel
    value 1 is returned with baseline_significant=False.
    """
    p1 = worst_case_p(counts, 1.0)
    if not p1 < alpha:
        return GammaStar(1.0, alpha, baseline_significant=False)
    if worst_case_p(counts, gamma_max) <= alpha:
        return GammaStar(gamma_max, alpha, baseline_significant=True, capped=True)
    lo, hi = 1.0, gamma_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if worst_case_p(counts, mid) <= alpha:
            lo = mid
        else:
            hi = mid
    return GammaStar(lo, alpha, baseline_significant=True)


def gamma_of(lam: float, delta: float) -> float:
    """Hidden-bias level implied by a (lambda, delta) amplification point."""
    return (lam * delta + 1.0) / (lam + delta)


def amplification_curve(
    gamma: float, lambda_grid: Sequence[float]
) -> list[tuple[float, float]]:
    """Factor gamma into (lambda, delta) points: delta = (gamma*lambda - 1)/(lambda - gamma).

    Grid points with lambda <= gamma are outside the domain and are skipped;
    an entirely invalid grid raises.
    """
    if gamma < 1.0:
        raise SensitivityDomainError(f"gamma must be >= 1, got {gamma}")
    out = []
    for lam in lambda_grid:
        if lam <= gamma:
            continue
        delta = (gamma * lam - 1.0) / (lam - gamma)
        out.append((float(lam), float(delta)))
    if not out:
        raise SensitivityDomainError("every lambda in the grid is <= gamma")
    return out


@dataclass
class SensitivityResult:
    item: str
    gamma_star: GammaStar
    alpha: float
    p_at: list  # (gamma, worst-case p) over the evaluation grid
    amplification: list  # (lambda, delta)

    def to_dict(self) -> dict:
        return {
            "item": self.item,
            "gamma_star": self.gamma_star.value,
            "baseline_significant": self.gamma_star.baseline_significant,
            "capped": self.gamma_star.capped,
            "alpha": self.alpha,
            "p_at": [[g, p] for g, p in self.p_at],
            "curve": [[l, d] for l, d in self.amplification],
        }


_LAMBDA_FACTORS = (1.1, 1.25, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0)


def sensitivity_result(
    counts: PairedCounts,
    alpha: float = 0.05,
    item: str = "",
    gamma_grid: Optional[Sequence[float]] = None,
    lambda_grid: Optional[Sequence[float]] = None,
) -> SensitivityResult:
    """Bundle gamma_star, the p(gamma) grid, and an amplification curve."""
    gs = gamma_star(counts, alpha)
    if gamma_grid is None:
        top = max(3.0, 2.0 * gs.value)
        gamma_grid = np.linspace(1.0, top, 25)
    p_at = [(float(g), worst_case_p(counts, float(g))) for g in gamma_grid]
    if gs.value > 1.0:
        if lambda_grid is None:
            lambda_grid = [gs.value * f for f in _LAMBDA_FACTORS]
        amp = amplification_curve(gs.value, lambda_grid)
    else:
        amp = []
    return SensitivityResult(item, gs, alpha, p_at, amp)
