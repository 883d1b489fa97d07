"""Outcome analysis over matched pairs.

Risk difference and risk ratio come from the paired contingency table;
uncertainty from a percentile bootstrap over pairs; the paired test is
McNemar's chi-square with an exact binomial p-value at small discordant
counts.  Subgroup, anchor-attribute, and dose-response analyses reuse the
same estimator on restricted pair sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats as sps

from . import _kernels as K
from ._util import derive_seed
from .context import ContextStats
from .dyads import DyadSet, tie_strength_per_dyad
from .errors import InsufficientBinsError, NoPairsError
from .matching import AdjustmentSpec, MatchedPairSet, build_matched_pairs
from .model import Daypart, Demographics

RR_UNDEFINED = None  # sentinel for a zero control arm


@dataclass(frozen=True)
class PairedCounts:
    """Pair-level 2x2: n11 both focals bought, n10 treated-arm only,
    n01 control-arm only, n00 neither."""

    n11: int
    n10: int
    n01: int
    n00: int

    def __post_init__(self):
        if min(self.n11, self.n10, self.n01, self.n00) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def n_pairs(self) -> int:
        return self.n11 + self.n10 + self.n01 + self.n00

    @property
    def marginal(self) -> tuple[tuple[int, int], tuple[int, int]]:
        """((treated yes, treated no), (control yes, control no)); each row
        totals the number of pairs."""
        n = self.n_pairs
        ty = self.n11 + self.n10
        cy = self.n11 + self.n01
        return ((ty, n - ty), (cy, n - cy))

    @property
    def discordant(self) -> int:
        return self.n10 + self.n01


def paired_counts(pairs: MatchedPairSet) -> PairedCounts:
    if pairs.n == 0:
        raise NoPairsError(f"no matched pairs for {pairs.item!r}")
    o_t, o_c = pairs.outcomes()
    n11 = int(np.sum((o_t == 1) & (o_c == 1)))
    n10 = int(o_t.sum()) - n11
    n01 = int(o_c.sum()) - n11
    return PairedCounts(n11, n10, n01, pairs.n - n11 - n10 - n01)


def risk_difference(counts: PairedCounts) -> float:
    n = counts.n_pairs
    if n == 0:
        raise NoPairsError("risk difference undefined on zero pairs")
    return (counts.n11 + counts.n10) / n - (counts.n11 + counts.n01) / n


def risk_ratio(counts: PairedCounts) -> Optional[float]:
    denom = counts.n11 + counts.n01
    if counts.n_pairs == 0:
        raise NoPairsError("risk ratio undefined on zero pairs")
    if denom == 0:
        return RR_UNDEFINED
    return (counts.n11 + counts.n10) / denom


def naive_risk_difference(dyads: DyadSet, item: str) -> float:
    """Unmatched focal-purchase rate difference by partner purchase status."""
    treated = dyads.partner_has(item)
    outcome = dyads.focal_has(item)
    nt = int(treated.sum())
    nc = dyads.n - nt
    if nt == 0 or nc == 0:
        raise NoPairsError("both partner-purchase groups must be non-empty")
    return float(outcome[treated].mean()) - float(outcome[~treated].mean())


def _binom_tail_half(k: int, n: int) -> float:
    """P(Bin(n, 1/2) >= k), exact."""
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    return sum(math.comb(n, i) for i in range(k, n + 1)) / 2**n


def paired_chi2(counts: PairedCounts, exact_below: int = 25) -> tuple[Optional[float], Optional[float]]:
    """McNemar test of no effect on the discordant pairs.

    Returns (statistic, p).  Below `exact_below` discordant pairs the p-value
    is the exact two-sided binomial tail; otherwise the 1-df chi-square
    survival function.  Zero discordant pairs give (None, None).
    """
    d = counts.discordant
    if d == 0:
        return (None, None)
    stat = (counts.n10 - counts.n01) ** 2 / d
    if d < exact_below:
        p = min(1.0, 2.0 * _binom_tail_half(max(counts.n10, counts.n01), d))
    else:
        # survival function of chi-square with one degree of freedom
        p = math.erfc(math.sqrt(stat / 2.0))
    return (float(stat), float(p))


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------


def _bootstrap_tables(pairs_or_outcomes, n_rep: int, seed: int):
    if isinstance(pairs_or_outcomes, MatchedPairSet):
        o_t, o_c = pairs_or_outcomes.outcomes()
    else:
        o_t, o_c = pairs_or_outcomes
        o_t = np.asarray(o_t, np.uint8)
        o_c = np.asarray(o_c, np.uint8)
    n = o_t.shape[0]
    n11, n10, n01 = K.bootstrap_paired_counts(o_t, o_c, n_rep, seed)
    return n, n11, n10, n01


def bootstrap_statistics(pairs, statistic: str, n_rep: int, seed: int) -> np.ndarray:
    """Per-replicate bootstrap values of 'rd' or 'rr' (rr may contain NaN)."""
    n, n11, n10, n01 = _bootstrap_tables(pairs, n_rep, seed)
    if statistic == "rd":
        return (n10 - n01) / n
    if statistic == "rr":
        denom = n11 + n01
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(denom > 0, (n11 + n10) / denom, np.nan)
    raise ValueError(f"unknown statistic {statistic!r}")


def bootstrap_ci(
    pairs,
    statistic: str = "rd",
    n_rep: int = 1000,
    seed: int = 0,
    levels: tuple[float, float] = (2.5, 97.5),
) -> Optional[tuple[float, float]]:
    """Percentile bootstrap interval over resampled pairs.

    For the risk ratio, replicates with an empty control arm are dropped;
    if more than 5% of replicates are undefined the interval is None.
    """
    vals = bootstrap_statistics(pairs, statistic, n_rep, seed)
    ok = vals[~np.isnan(vals)]
    if ok.shape[0] < 0.95 * n_rep or ok.shape[0] == 0:
        return None
    lo, hi = np.percentile(ok, list(levels), method="linear")
    return (float(lo), float(hi))


@dataclass
class EffectEstimate:
    item: str
    n_pairs: int
    rd: Optional[float] = None
    rr: Optional[float] = None
    ci_rd: Optional[tuple[float, float]] = None
    ci_rr: Optional[tuple[float, float]] = None
    se_rd: Optional[float] = None
    chi2: Optional[float] = None
    p: Optional[float] = None
    counts: Optional[PairedCounts] = None
    n_unmatched: int = 0
    insufficient: bool = False

    def to_dict(self, stratum: str = "pooled") -> dict:
        return {
            "item": self.item,
            "stratum": stratum,
            "n_pairs": self.n_pairs,
            "rd": self.rd,
            "rd_ci": list(self.ci_rd) if self.ci_rd else None,
            "rr": self.rr,
            "rr_ci": list(self.ci_rr) if self.ci_rr else None,
            "chi2": self.chi2,
            "p": self.p,
        }


def effect_estimate(
    pairs: MatchedPairSet, n_rep: int = 1000, seed: int = 0
) -> EffectEstimate:
    """Point estimates, bootstrap CIs, and the paired test for one pair set."""
    counts = paired_counts(pairs)
    rd = risk_difference(counts)
    rr = risk_ratio(counts)
    rd_vals = bootstrap_statistics(pairs, "rd", n_rep, derive_seed(seed, "rd"))
    ci_rd = (
        float(np.percentile(rd_vals, 2.5, method="linear")),
        float(np.percentile(rd_vals, 97.5, method="linear")),
    )
    se_rd = float(np.std(rd_vals, ddof=1)) if n_rep > 1 else None
    ci_rr = bootstrap_ci(pairs, "rr", n_rep, derive_seed(seed, "rr"))
    chi2, p = paired_chi2(counts)
    return EffectEstimate(
        item=pairs.item,
        n_pairs=pairs.n,
        rd=rd,
        rr=rr,
        ci_rd=ci_rd,
        ci_rr=ci_rr,
        se_rd=se_rd,
        chi2=chi2,
        p=p,
        counts=counts,
        n_unmatched=pairs.n_unmatched,
    )


# ---------------------------------------------------------------------------
# subgroups
# ---------------------------------------------------------------------------

GROUPINGS = (
    "partner_status",
    "focal_status",
    "status_pair",
    "partner_age",
    "focal_age",
    "partner_gender",
    "focal_gender",
    "year",
    "shop",
    "tie_strength_bins",
    "addition_item",
    "daypart",
)


def _pair_labels(
    pairs: MatchedPairSet,
    grouping: str,
    demographics: Optional[Demographics],
    age_cuts: tuple[int, int],
    tie_edges: Sequence[float],
) -> list[str]:
    """One stratum label per matched pair, resolved on the treated dyad."""
    d = pairs.dyads
    log = d.log
    t = pairs.treated_idx
    if grouping == "addition_item":
        return [pairs.item] * pairs.n
    if grouping == "daypart":
        return [Daypart(int(v)).label for v in d.daypart[t]]
    if grouping == "shop":
        return [log.shops[s] for s in d.shop_idx[t]]
    if grouping == "year":
        return [str(y) for y in log.year[d.focal_i[t]]]
    if grouping == "tie_strength_bins":
        strengths = tie_strength_per_dyad(d)[t]
        edges = list(tie_edges)
        labels = []
        for s in strengths:
            k = int(np.searchsorted(edges, s, side="left"))
            lo = 0.0 if k == 0 else edges[k - 1]
            hi = edges[k] if k < len(edges) else 1.0
            labels.append(f"({lo:g},{hi:g}]")
        return labels
    if demographics is None:
        raise ValueError(f"grouping {grouping!r} needs demographics")
    years = log.year

    def attr(side_rows, kind):
        out = []
        for i in side_rows:
            pid = log.persons[log.person_idx[i]]
            rec = demographics.get(pid)
            if rec is None:
                out.append("unknown")
            elif kind == "status":
                out.append(rec.status or "unknown")
            elif kind == "gender":
                out.append(rec.gender or "unknown")
            else:
                if rec.birth_year is None:
                    out.append("unknown")
                else:
                    from .dyads import age_tercile_label

                    out.append(age_tercile_label(int(years[i]) - rec.birth_year, age_cuts))
        return out

    partner_rows = d.partner_i[t]
    focal_rows = d.focal_i[t]
    if grouping == "partner_status":
        return attr(partner_rows, "status")
    if grouping == "focal_status":
        return attr(focal_rows, "status")
    if grouping == "status_pair":
        return [
            f"{a}-{b}" for a, b in zip(attr(partner_rows, "status"), attr(focal_rows, "status"))
        ]
    if grouping == "partner_gender":
        return attr(partner_rows, "gender")
    if grouping == "focal_gender":
        return attr(focal_rows, "gender")
    if grouping == "partner_age":
        return attr(partner_rows, "age")
    if grouping == "focal_age":
        return attr(focal_rows, "age")
    raise ValueError(f"unknown grouping {grouping!r}")


def subgroup_estimates(
    pairs: MatchedPairSet,
    grouping: str,
    demographics: Optional[Demographics] = None,
    n_rep: int = 1000,
    seed: int = 0,
    min_pairs: int = 50,
    age_cuts: tuple[int, int] = (22, 32),
    tie_edges: Sequence[float] = (0.25, 0.5, 0.75),
) -> dict[str, EffectEstimate]:
    """Independent effect estimate per stratum of the grouping attribute.

    Strata smaller than `min_pairs` are reported with `insufficient=True`
    and carry no estimates.  Stratum labels partition the pair set.
    """
    labels = np.asarray(_pair_labels(pairs, grouping, demographics, age_cuts, tie_edges))
    out: dict[str, EffectEstimate] = {}
    for label in sorted(set(labels.tolist())):
        sel = labels == label
        sub = pairs.subset(sel)
        if sub.n < min_pairs:
            out[label] = EffectEstimate(item=pairs.item, n_pairs=sub.n, insufficient=True)
        else:
            out[label] = effect_estimate(sub, n_rep, derive_seed(seed, grouping, label))
    return out


def anchor_mimicry(
    dyads: DyadSet,
    context: ContextStats,
    anchor_attribute: str,
    value: Optional[str] = None,
    spec: AdjustmentSpec = AdjustmentSpec(),
    n_rep: int = 1000,
    seed: int = 0,
) -> EffectEstimate:
    """Mimicry of an anchor attribute instead of an addition item.

    ``meal_vegetarian`` contrasts vegetarian vs other meals over lunch dyads;
    ``beverage_kind`` contrasts the given kind (default coffee) vs the other
    over breakfast/afternoon dyads.  Same matching + estimation path, with
    the focus "item" being the attribute value's category key.
    """
    if anchor_attribute == "meal_vegetarian":
        item = "meal_vegetarian"
        sel = dyads.daypart == Daypart.LUNCH.value
    elif anchor_attribute == "beverage_kind":
        item = value or "coffee"
        if item not in ("coffee", "tea"):
            raise ValueError("beverage kind must be 'coffee' or 'tea'")
        sel = (dyads.daypart == Daypart.BREAKFAST.value) | (
            dyads.daypart == Daypart.AFTERNOON.value
        )
    else:
        raise ValueError(f"unknown anchor attribute {anchor_attribute!r}")
    sub = dyads.subset(sel)
    pairs = build_matched_pairs(sub, item, context, spec)
    if pairs.n == 0:
        raise NoPairsError(f"no matched pairs for anchor attribute {anchor_attribute!r}")
    return effect_estimate(pairs, n_rep, derive_seed(seed, "anchor", anchor_attribute))


# ---------------------------------------------------------------------------
# dose-response
# ---------------------------------------------------------------------------


def ols_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float]:
    """Least squares fit y = a + b*x; returns (slope, intercept, p, se_slope).

    p is the two-sided t-test of zero slope with n-2 degrees of freedom;
    a perfect constant fit gives (0, mean, 1, 0).
    """
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    n = x.shape[0]
    if n < 3:
        raise ValueError("need at least 3 points for a slope test")
    mx = float(x.mean())
    my = float(y.mean())
    dx = x - mx
    sxx = float(np.sum(dx * dx))
    if sxx == 0.0:
        raise ValueError("degenerate regressor: all x equal")
    slope = float(np.sum(dx * (y - my))) / sxx
    intercept = my - slope * mx
    resid = y - (intercept + slope * x)
    sse = float(np.sum(resid * resid))
    se = math.sqrt(sse / (n - 2) / sxx)
    if se == 0.0:
        return (slope, intercept, 1.0 if slope == 0.0 else 0.0, 0.0)
    t = slope / se
    p = 2.0 * float(sps.t.sf(abs(t), n - 2))
    return (slope, intercept, p, se)


@dataclass
class DoseResponseResult:
    item: str
    bins: list  # (midpoint_s, EffectEstimate)
    slope_rd: float
    p_rd: float
    slope_rr: Optional[float]
    p_rr: Optional[float]
    intercept_rd: float = 0.0

    def to_dict(self) -> dict:
        return {
            "item": self.item,
            "slope_rd": self.slope_rd,
            "intercept_rd": self.intercept_rd,
            "p_rd": self.p_rd,
            "slope_rr": self.slope_rr,
            "p_rr": self.p_rr,
            "bins": [
                {"midpoint_s": mid, **est.to_dict(stratum=f"delay<= {mid + 15:g}s")}
                for mid, est in self.bins
            ],
        }


def dose_response(
    pairs: MatchedPairSet,
    bin_width_s: int = 30,
    max_delay_s: int = 300,
    n_rep: int = 1000,
    seed: int = 0,
) -> DoseResponseResult:
    """Per-delay-bin effect estimates and the OLS trend over bin midpoints."""
    delays = pairs.treated_delays()
    if pairs.n == 0:
        raise NoPairsError("dose-response needs matched pairs")
    n_bins = max(1, int(math.ceil(max_delay_s / bin_width_s)))
    idx = np.minimum(delays // bin_width_s, n_bins - 1).astype(np.int64)
    bins = []
    mids, rds, rrs, rr_mids = [], [], [], []
    for b in range(n_bins):
        sel = idx == b
        if not sel.any():
            continue
        mid = b * bin_width_s + bin_width_s / 2.0
        est = effect_estimate(pairs.subset(sel), n_rep, derive_seed(seed, "dose", b))
        bins.append((mid, est))
        mids.append(mid)
        rds.append(est.rd)
        if est.rr is not None:
            rr_mids.append(mid)
            rrs.append(est.rr)
    if len(bins) < 3:
        raise InsufficientBinsError(f"only {len(bins)} non-empty delay bins; need at least 3")
    slope_rd, intercept_rd, p_rd, _ = ols_line(np.asarray(mids), np.asarray(rds))
    slope_rr = p_rr = None
    if len(rrs) >= 3:
        slope_rr, _, p_rr, _ = ols_line(np.asarray(rr_mids), np.asarray(rrs))
    return DoseResponseResult(
        item=pairs.item,
        bins=bins,
        slope_rd=slope_rd,
        p_rd=p_rd,
        slope_rr=slope_rr,
        p_rr=p_rr,
        intercept_rd=intercept_rd,
    )
