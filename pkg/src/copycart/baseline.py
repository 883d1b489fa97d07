"""Randomization baselines and the purchase-order coordination probe.

``randomize_partners`` replaces each dyad's partner transaction with a
uniform draw from the same (shop, date, daypart) cell, excluding the
original partner transaction and every transaction of the focal person.
Any mimicry estimate recomputed on such a set should vanish.

``coordination_test`` asks whether the focal-purchase rate depends on who
of a habitual pair goes first; pre-agreed purchases show no such order
asymmetry, person-to-person influence does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats as sps

from . import context as ctx
from .dyads import DyadSet
from .errors import InsufficientDataError

__all__ = ["randomize_partners", "coordination_test", "CoordinationResult", "welch_t"]


def _with_partners(dyads: DyadSet, partner_rows: np.ndarray, sel: np.ndarray) -> DyadSet:
    log = dyads.log
    focal = dyads.focal_i[sel]
    partner = partner_rows[sel]
    return DyadSet(log, partner, focal, log.ts[focal] - log.ts[partner], randomized=True)


def randomize_partners(
    dyads: DyadSet, seed: int, drop_if_no_candidate: bool = True
) -> DyadSet:
    """Re-draw every partner uniformly from the focal transaction's cell.

    With no eligible candidate the dyad is dropped (default) or kept with
    its original partner.  The draw is a single uniform index per dyad
    mapped over the excluded rows, so no rejection loop is involved.
    """
    log = dyads.log
    if dyads.n == 0:
        return DyadSet(
            log, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.int64), True
        )
    cells_all = ctx.encode_cells(log.shop_idx, log.date_ord, log.daypart)
    cell_order = np.argsort(cells_all, kind="stable").astype(np.int64)
    sorted_cells = cells_all[cell_order]
    n_persons = len(log.persons)
    combo = cells_all * n_persons + log.person_idx.astype(np.int64)
    cp_order = np.argsort(combo, kind="stable").astype(np.int64)
    sorted_combo = combo[cp_order]

    d_cell = dyads.cell_keys()
    ms = np.searchsorted(sorted_cells, d_cell, side="left")
    me = np.searchsorted(sorted_cells, d_cell, side="right")
    d_combo = d_cell * n_persons + dyads.focal_person.astype(np.int64)
    fs = np.searchsorted(sorted_combo, d_combo, side="left")
    fe = np.searchsorted(sorted_combo, d_combo, side="right")
    n_cand = (me - ms) - (fe - fs) - 1  # minus the original partner tx

    ok = n_cand >= 1
    rng = np.random.default_rng(int(seed))
    draws = np.zeros(dyads.n, np.int64)
    if ok.any():
        draws[ok] = rng.integers(0, n_cand[ok])

    new_partner = dyads.partner_i.copy()
    for k in np.nonzero(ok)[0]:
        members = cell_order[ms[k] : me[k]]  # ascending row ids
        excluded = np.sort(np.append(cp_order[fs[k] : fe[k]], dyads.partner_i[k]))
        j = int(draws[k])
        for p in np.searchsorted(members, excluded):
            if p <= j:
                j += 1
        new_partner[k] = members[j]

    sel = ok if drop_if_no_candidate else np.ones(dyads.n, bool)
    return _with_partners(dyads, new_partner, sel)


def welch_t(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Unequal-variance two-sample t-test; returns (t, p, df).

    Two degenerate groups give t=0, p=1 when the means agree and an
    infinite statistic with p=0 when they do not.
    """
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    n1, n2 = x.shape[0], y.shape[0]
    if n1 < 2 or n2 < 2:
        raise InsufficientDataError("each group needs at least 2 observations")
    m1, m2 = float(x.mean()), float(y.mean())
    v1, v2 = float(x.var(ddof=1)), float(y.var(ddof=1))
    a, b = v1 / n1, v2 / n2
    if a + b == 0.0:
        if m1 == m2:
            return (0.0, 1.0, float(n1 + n2 - 2))
        return (math.copysign(math.inf, m1 - m2), 0.0, float(n1 + n2 - 2))
    t = (m1 - m2) / math.sqrt(a + b)
    df = (a + b) ** 2 / (a * a / (n1 - 1) + b * b / (n2 - 1))
    p = 2.0 * float(sps.t.sf(abs(t), df))
    return (t, p, df)


@dataclass
class CoordinationResult:
    item: str
    n_pairs: int
    n_leader_first: int
    n_follower_first: int
    rate_leader_first: float
    rate_follower_first: float
    t: float
    p: float
    df: float

    def to_dict(self) -> dict:
        return {
            "item": self.item,
            "n_pairs": self.n_pairs,
            "n_leader_first": self.n_leader_first,
            "n_follower_first": self.n_follower_first,
            "rate_leader_first": self.rate_leader_first,
            "rate_follower_first": self.rate_follower_first,
            "t": self.t,
            "p": self.p,
            "df": self.df,
        }


def coordination_test(
    dyads: DyadSet,
    item: str,
    min_per_order: int = 10,
    sample_per_pair: Optional[int] = 10,
    seed: int = 0,
) -> CoordinationResult:
    """Order-asymmetry test over habitual pairs' treated dyads.

    For each unordered person pair with at least ``min_per_order`` treated
    dyads in each direction, the pair's leader is whoever goes first more
    often over ALL of the pair's dyads (ties broken by lexicographic person
    id), and the focal purchase rate is computed per direction over
    ``sample_per_pair`` treated dyads drawn without replacement (seeded).
    The two collections of per-pair rates are compared with a Welch t-test.

    Leadership must come from all dyads, not treated ones: treated counts
    grow with the partner's purchase propensity, and picking the busier
    treated direction would bias the role split away from the null.  One
    rate per pair and direction keeps large pairs from dominating and keeps
    the test calibrated when outcomes are correlated within a pair; at
    least two qualifying pairs are needed.
    """
    treated = dyads.partner_has(item)
    if not treated.any():
        raise InsufficientDataError(f"no treated dyads for {item!r}")
    outcome = dyads.focal_has(item).astype(np.float64)
    persons = dyads.log.persons
    pp = dyads.partner_person.astype(np.int64)
    fp = dyads.focal_person.astype(np.int64)
    lo = np.minimum(pp, fp)
    hi = np.maximum(pp, fp)
    key = lo * len(persons) + hi
    order = np.argsort(key, kind="stable")
    keys_sorted = key[order]
    starts = np.concatenate(
        ([0], np.nonzero(keys_sorted[1:] != keys_sorted[:-1])[0] + 1, [dyads.n])
    )
    rng = np.random.default_rng(int(seed))
    lead_rates, foll_rates = [], []
    n_lead = n_foll = n_pairs = 0
    for g in range(starts.shape[0] - 1):
        rows = order[starts[g] : starts[g + 1]]
        a = int(lo[rows[0]])
        b = int(hi[rows[0]])
        a_first = pp[rows] == a
        t_rows = rows[treated[rows]]
        dir_a = t_rows[pp[t_rows] == a]
        dir_b = t_rows[pp[t_rows] != a]
        if dir_a.shape[0] < min_per_order or dir_b.shape[0] < min_per_order:
            continue
        all_a = int(a_first.sum())
        all_b = rows.shape[0] - all_a
        if all_a != all_b:
            leader_is_a = all_a > all_b
        else:
            leader_is_a = persons[a] <= persons[b]
        lead_rows = dir_a if leader_is_a else dir_b
        foll_rows = dir_b if leader_is_a else dir_a
        if sample_per_pair:
            if lead_rows.shape[0] > sample_per_pair:
                lead_rows = rng.choice(lead_rows, sample_per_pair, replace=False)
            if foll_rows.shape[0] > sample_per_pair:
                foll_rows = rng.choice(foll_rows, sample_per_pair, replace=False)
        lead_rates.append(float(outcome[lead_rows].mean()))
        foll_rates.append(float(outcome[foll_rows].mean()))
        n_lead += lead_rows.shape[0]
        n_foll += foll_rows.shape[0]
        n_pairs += 1
    if n_pairs < 2:
        raise InsufficientDataError(
            f"need 2 pairs with {min_per_order} treated dyads in each direction, "
            f"found {n_pairs}"
        )
    lead = np.asarray(lead_rates)
    foll = np.asarray(foll_rates)
    t, p, df = welch_t(lead, foll)
    return CoordinationResult(
        item=item,
        n_pairs=n_pairs,
        n_leader_first=int(n_lead),
        n_follower_first=int(n_foll),
        rate_leader_first=float(lead.mean()),
        rate_follower_first=float(foll.mean()),
        t=t,
        p=p,
        df=df,
    )
