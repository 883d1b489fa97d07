"""Matched pairs of dyads: exact keys, popularity caliper, balance checks.

A treated dyad (partner bought the focus item) is paired 1:1 without
replacement with a control dyad (partner did not) that agrees exactly on
partner identity, shop, and daypart, with the item available in both cells
and cell popularity within the caliper.  Treated dyads are processed in
(date, focal tx_id) order inside each stratum and greedily take the
remaining control with the nearest popularity.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import _kernels as K
from .context import ContextStats
from .dyads import DyadSet
from .errors import NoPairsError
from .model import anchor_code_arrays, anchor_mask_arrays


@dataclass(frozen=True)
class AdjustmentSpec:
    """Which confounders are held fixed when pairing dyads.

    With ``exclude_own_transactions`` the popularity each dyad is matched on
    leaves the dyad's own two transactions out of its cell share.  Raw cell
    shares contain the exposure and the outcome, and nearest-popularity
    matching on them conditions on both; at a few hundred transactions per
    cell this depresses the estimate by roughly two transactions' worth of
    popularity.  Availability is still judged on the whole cell.
    """

    match_focal_identity: bool = False
    match_exact_anchor: bool = False
    caliper: float = 0.10
    caliper_absolute: bool = False
    exclude_own_transactions: bool = False

    def __post_init__(self):
        if not (0.0 < self.caliper < 1.0):
            raise ValueError("caliper must lie in (0, 1)")


def _group_key(columns: Sequence[np.ndarray]) -> np.ndarray:
    """Pack parallel integer columns into one int64 grouping key."""
    key = np.zeros(columns[0].shape[0], np.int64)
    for col in columns:
        col = col.astype(np.int64)
        lo = int(col.min()) if col.shape[0] else 0
        card = int(col.max()) - lo + 1 if col.shape[0] else 1
        key = key * card + (col - lo)
    return key


class MatchedPairSet:
    """Result of 1:1 matching for one focus item over one dyad set."""

    def __init__(
        self,
        dyads: DyadSet,
        item: str,
        treated_idx: np.ndarray,
        control_idx: np.ndarray,
        pop_t: np.ndarray,
        pop_c: np.ndarray,
        n_treated_total: int,
        n_unmatched: int,
        eligible_treated: Optional[np.ndarray] = None,
        eligible_control: Optional[np.ndarray] = None,
        eligible_pop: Optional[np.ndarray] = None,
    ):
        self.dyads = dyads
        self.item = item
        self.treated_idx = treated_idx.astype(np.int64)
        self.control_idx = control_idx.astype(np.int64)
        self.pop_t = pop_t
        self.pop_c = pop_c
        self.n_treated_total = int(n_treated_total)
        self.n_unmatched = int(n_unmatched)
        # full eligibility pools, kept for before-matching balance
        self._eligible_treated = eligible_treated
        self._eligible_control = eligible_control
        self._eligible_pop = eligible_pop

    @property
    def n(self) -> int:
        return self.treated_idx.shape[0]

    def __len__(self) -> int:
        return self.n

    def outcomes(self) -> tuple[np.ndarray, np.ndarray]:
        """(treated-arm, control-arm) focal purchase indicators, uint8."""
        has = self.dyads.focal_has(self.item)
        return (
            has[self.treated_idx].astype(np.uint8),
            has[self.control_idx].astype(np.uint8),
        )

    def treated_delays(self) -> np.ndarray:
        return self.dyads.delay_s[self.treated_idx]

    def subset(self, sel: np.ndarray) -> "MatchedPairSet":
        ti = self.treated_idx[sel]
        return MatchedPairSet(
            self.dyads,
            self.item,
            ti,
            self.control_idx[sel],
            self.pop_t[sel],
            self.pop_c[sel],
            n_treated_total=ti.shape[0],
            n_unmatched=0,
        )

    def to_csv(self, dest: Union[str, os.PathLike, io.TextIOBase]) -> None:
        close = False
        if isinstance(dest, (str, os.PathLike)):
            dest = open(dest, "w", encoding="utf-8", newline="")
            close = True
        try:
            log = self.dyads.log
            w = csv.writer(dest, lineterminator="\n")
            w.writerow(
                [
                    "item",
                    "treated_partner_tx",
                    "treated_focal_tx",
                    "control_partner_tx",
                    "control_focal_tx",
                    "popularity_t",
                    "popularity_c",
                ]
            )
            for k in range(self.n):
                t = self.treated_idx[k]
                c = self.control_idx[k]
                w.writerow(
                    [
                        self.item,
                        log.tx_ids[self.dyads.partner_i[t]],
                        log.tx_ids[self.dyads.focal_i[t]],
                        log.tx_ids[self.dyads.partner_i[c]],
                        log.tx_ids[self.dyads.focal_i[c]],
                        repr(float(self.pop_t[k])),
                        repr(float(self.pop_c[k])),
                    ]
                )
        finally:
            if close:
                dest.close()

    @classmethod
    def from_csv(
        cls, source: Union[str, os.PathLike, io.TextIOBase], dyads: DyadSet
    ) -> dict[str, "MatchedPairSet"]:
        """Read a matched-pair dump back; returns one set per item found."""
        close = False
        if isinstance(source, (str, os.PathLike)):
            source = open(source, "r", encoding="utf-8", newline="")
            close = True
        try:
            log = dyads.log
            where = {}
            for k in range(dyads.n):
                where[(int(dyads.partner_i[k]), int(dyads.focal_i[k]))] = k
            reader = csv.reader(source)
            next(reader, None)
            rows: dict[str, list] = {}
            for row in reader:
                if not row:
                    continue
                item = row[0]
                t = where[(log.index_of(row[1]), log.index_of(row[2]))]
                c = where[(log.index_of(row[3]), log.index_of(row[4]))]
                rows.setdefault(item, []).append((t, c, float(row[5]), float(row[6])))
            out = {}
            for item, lst in rows.items():
                ti = np.asarray([r[0] for r in lst], np.int64)
                ci = np.asarray([r[1] for r in lst], np.int64)
                pt = np.asarray([r[2] for r in lst], np.float64)
                pc = np.asarray([r[3] for r in lst], np.float64)
                out[item] = cls(dyads, item, ti, ci, pt, pc, len(lst), 0)
            return out
        finally:
            if close:
                source.close()


def build_matched_pairs(
    dyads: DyadSet, item: str, context: ContextStats, spec: AdjustmentSpec = AdjustmentSpec()
) -> MatchedPairSet:
    """Greedy caliper matching of treated vs control dyads for one item."""
    log = dyads.log
    n = dyads.n
    if n == 0:
        empty = np.empty(0, np.int64)
        return MatchedPairSet(dyads, item, empty, empty, np.empty(0), np.empty(0), 0, 0)

    treated = dyads.partner_has(item)
    anchored = anchor_mask_arrays(log.mask, log.daypart)
    ok = anchored[dyads.partner_i] & anchored[dyads.focal_i]
    pop = context.popularity_for_cells(dyads.cell_keys(), item)
    ok &= pop > 0.0  # item must be available in the dyad's cell
    if spec.exclude_own_transactions:
        n_cell, cnt = context.counts_for_cells(dyads.cell_keys(), item)
        own = treated.astype(np.int64) + dyads.focal_has(item).astype(np.int64)
        pop = (cnt - own) / np.maximum(n_cell - 2, 1)

    t_rows = np.nonzero(treated & ok)[0]
    c_rows = np.nonzero(~treated & ok)[0]
    n_treated_total = int(t_rows.shape[0])
    if n_treated_total == 0 or c_rows.shape[0] == 0:
        empty = np.empty(0, np.int64)
        return MatchedPairSet(
            dyads, item, empty, empty, np.empty(0), np.empty(0), n_treated_total, n_treated_total
        )

    cols_t = [dyads.partner_person[t_rows], dyads.shop_idx[t_rows], dyads.daypart[t_rows]]
    cols_c = [dyads.partner_person[c_rows], dyads.shop_idx[c_rows], dyads.daypart[c_rows]]
    if spec.match_focal_identity:
        cols_t.append(dyads.focal_person[t_rows])
        cols_c.append(dyads.focal_person[c_rows])
    if spec.match_exact_anchor:
        codes = anchor_code_arrays(log.mask, log.daypart)
        cols_t += [codes[dyads.partner_i[t_rows]], codes[dyads.focal_i[t_rows]]]
        cols_c += [codes[dyads.partner_i[c_rows]], codes[dyads.focal_i[c_rows]]]

    # pack both sides together so each column shares one cardinality
    packed = [np.concatenate([a, b]).astype(np.int64) for a, b in zip(cols_t, cols_c)]
    key_all = _group_key(packed)
    key_t = key_all[: t_rows.shape[0]]
    key_c = key_all[t_rows.shape[0] :]

    strata, key_t_inv = np.unique(key_t, return_inverse=True)
    c_in = np.searchsorted(strata, key_c)
    c_in = np.minimum(c_in, strata.shape[0] - 1)
    c_valid = strata[c_in] == key_c
    c_rows = c_rows[c_valid]
    key_c_inv = c_in[c_valid]

    date = dyads.date_ord
    rank = log.txid_rank[dyads.focal_i]
    t_order = np.lexsort((rank[t_rows], date[t_rows], key_t_inv))
    c_order = np.lexsort((rank[c_rows], date[c_rows], key_c_inv))
    t_rows = t_rows[t_order]
    c_rows = c_rows[c_order]
    s_t = key_t_inv[t_order]
    s_c = key_c_inv[c_order]

    n_strata = strata.shape[0]
    t_start = np.searchsorted(s_t, np.arange(n_strata + 1)).astype(np.int64)
    c_start = np.searchsorted(s_c, np.arange(n_strata + 1)).astype(np.int64)

    t_pop = np.ascontiguousarray(pop[t_rows])
    c_pop = np.ascontiguousarray(pop[c_rows])
    hit = K.greedy_caliper_match(
        t_start, c_start, t_pop, c_pop, float(spec.caliper), not spec.caliper_absolute
    )

    matched = hit >= 0
    ti = t_rows[matched]
    ci = c_rows[hit[matched]]
    pt = t_pop[matched]
    pc = c_pop[hit[matched]]
    # report pairs in global (date, focal tx_id) order of the treated dyad
    out_order = np.lexsort((rank[ti], date[ti]))
    return MatchedPairSet(
        dyads,
        item,
        ti[out_order],
        ci[out_order],
        pt[out_order],
        pc[out_order],
        n_treated_total=n_treated_total,
        n_unmatched=n_treated_total - int(matched.sum()),
        eligible_treated=np.sort(t_rows),
        eligible_control=np.sort(c_rows),
        eligible_pop=pop,
    )


def smd(treated_values: np.ndarray, control_values: np.ndarray) -> float:
    """Standardized mean difference with the n-1 variance convention."""
    t = np.asarray(treated_values, np.float64)
    c = np.asarray(control_values, np.float64)
    if t.shape[0] < 2 or c.shape[0] < 2:
        return math.nan
    mt = float(t.mean())
    mc = float(c.mean())
    pooled = math.sqrt((float(t.var(ddof=1)) + float(c.var(ddof=1))) / 2.0)
    if pooled == 0.0:
        if mt == mc:
            return 0.0
        return math.inf if mt > mc else -math.inf
    return (mt - mc) / pooled


DEFAULT_BALANCE_COVARIATES = (
    "popularity",
    "delay_s",
    "time_of_day_s",
    "partner_basket_size",
    "focal_basket_size",
)


@dataclass
class BalanceReport:
    item: str
    n_pairs: int
    covariates: dict  # name -> {"before": smd, "after": smd}
    threshold: float = 0.2

    @property
    def passed(self) -> bool:
        vals = [abs(v["after"]) for v in self.covariates.values() if not math.isnan(v["after"])]
        return all(v < self.threshold for v in vals)

    def to_dict(self) -> dict:
        return {
            "item": self.item,
            "n_pairs": self.n_pairs,
            "threshold": self.threshold,
            "pass": self.passed,
            "covariates": {
                k: {"before": v["before"], "after": v["after"]} for k, v in self.covariates.items()
            },
        }


def _covariate(pairs: MatchedPairSet, name: str, rows: np.ndarray, pop: np.ndarray) -> np.ndarray:
    d = pairs.dyads
    log = d.log
    if name == "popularity":
        return pop
    if name == "delay_s":
        return d.delay_s[rows].astype(np.float64)
    if name == "time_of_day_s":
        return log.secs[d.focal_i[rows]].astype(np.float64)
    if name == "partner_basket_size":
        # the focus item is the treatment itself, so it never counts here
        sizes = log.basket_sizes[d.partner_i[rows]].astype(np.float64)
        return sizes - d.partner_has(pairs.item)[rows]
    if name == "focal_basket_size":
        # likewise the outcome is removed from the focal basket count
        sizes = log.basket_sizes[d.focal_i[rows]].astype(np.float64)
        return sizes - d.focal_has(pairs.item)[rows]
    raise ValueError(f"unknown balance covariate {name!r}")


def balance_report(
    pairs: MatchedPairSet,
    covariates: Sequence[str] = DEFAULT_BALANCE_COVARIATES,
    threshold: float = 0.2,
) -> BalanceReport:
    """SMD of each covariate before (all eligible dyads) and after matching."""
    if pairs.n == 0:
        raise NoPairsError(f"no matched pairs for {pairs.item!r}")
    if pairs._eligible_treated is None:
        raise ValueError("balance requires a freshly built MatchedPairSet")
    et = pairs._eligible_treated
    ec = pairs._eligible_control
    pop = pairs._eligible_pop
    out = {}
    for name in covariates:
        before = smd(
            _covariate(pairs, name, et, pop[et]), _covariate(pairs, name, ec, pop[ec])
        )
        after = smd(
            _covariate(pairs, name, pairs.treated_idx, pairs.pop_t),
            _covariate(pairs, name, pairs.control_idx, pairs.pop_c),
        )
        out[name] = {"before": before, "after": after}
    return BalanceReport(pairs.item, pairs.n, out, threshold)
