"""Queue reconstruction, dyad extraction, filters, ties, co-purchase tables.

A dyad is an ordered (partner, focal) pair of consecutive transactions by
different persons at one register on one date, at most ``max_gap_s`` apart,
with nobody in between.  The partner's basket is the treatment side, the
focal's the outcome side.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import context as ctx
from .errors import EmptyMatrixError, UndefinedPairError
from .model import (
    DAYPART_BY_LABEL,
    Daypart,
    ADDITION_KEYS,
    CATEGORY_BIT,
    Demographics,
    ItemCatalog,
    TransactionLog,
    anchor_mask_arrays,
)


@dataclass
class Queues:
    """Per-(shop, register, date) transaction sequences, time-ordered."""

    log: TransactionLog
    order: np.ndarray  # row indices, grouped by queue then (ts, tx_id)
    start: np.ndarray  # queue q spans order[start[q]:start[q+1]]

    @property
    def n_queues(self) -> int:
        return self.start.shape[0] - 1

    def sequences(self) -> list[np.ndarray]:
        return [self.order[self.start[q] : self.start[q + 1]] for q in range(self.n_queues)]


def reconstruct_queues(log: TransactionLog) -> Queues:
    """Group the log into queues; within a queue sort by time then tx_id."""
    if log.n == 0:
        return Queues(log, np.empty(0, np.int64), np.zeros(1, np.int64))
    order = np.lexsort((log.txid_rank, log.ts, log.date_ord, log.register_idx, log.shop_idx))
    shop = log.shop_idx[order]
    reg = log.register_idx[order]
    day = log.date_ord[order]
    brk = (shop[1:] != shop[:-1]) | (reg[1:] != reg[:-1]) | (day[1:] != day[:-1])
    starts = np.concatenate(([0], np.nonzero(brk)[0] + 1, [log.n]))
    return Queues(log, order.astype(np.int64), starts.astype(np.int64))


class DyadSet:
    """Columnar set of dyads over one log.

    ``randomized`` marks baseline sets whose partner transactions were
    re-drawn; those may break adjacency invariants by design.
    """

    def __init__(
        self,
        log: TransactionLog,
        partner_i: np.ndarray,
        focal_i: np.ndarray,
        delay_s: np.ndarray,
        randomized: bool = False,
    ):
        self.log = log
        self.partner_i = partner_i.astype(np.int64)
        self.focal_i = focal_i.astype(np.int64)
        self.delay_s = delay_s.astype(np.int64)
        self.randomized = randomized

    @property
    def n(self) -> int:
        return self.partner_i.shape[0]

    def __len__(self) -> int:
        return self.n

    # cell/context attributes come from the focal transaction
    @property
    def shop_idx(self) -> np.ndarray:
        return self.log.shop_idx[self.focal_i]

    @property
    def register_idx(self) -> np.ndarray:
        return self.log.register_idx[self.focal_i]

    @property
    def date_ord(self) -> np.ndarray:
        return self.log.date_ord[self.focal_i]

    @property
    def daypart(self) -> np.ndarray:
        return self.log.daypart[self.focal_i]

    @property
    def partner_person(self) -> np.ndarray:
        return self.log.person_idx[self.partner_i]

    @property
    def focal_person(self) -> np.ndarray:
        return self.log.person_idx[self.focal_i]

    def cell_keys(self) -> np.ndarray:
        return ctx.encode_cells(self.shop_idx, self.date_ord, self.daypart)

    def partner_has(self, category: str) -> np.ndarray:
        bit = np.uint16(CATEGORY_BIT[category])
        return ((self.log.mask[self.partner_i] >> bit) & np.uint16(1)).astype(bool)

    def focal_has(self, category: str) -> np.ndarray:
        bit = np.uint16(CATEGORY_BIT[category])
        return ((self.log.mask[self.focal_i] >> bit) & np.uint16(1)).astype(bool)

    def pair_keys(self) -> np.ndarray:
        """Unordered person-pair key per dyad."""
        a = self.partner_person.astype(np.int64)
        b = self.focal_person.astype(np.int64)
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        return lo * len(self.log.persons) + hi

    def subset(self, sel: np.ndarray) -> "DyadSet":
        return DyadSet(
            self.log, self.partner_i[sel], self.focal_i[sel], self.delay_s[sel], self.randomized
        )

    def validate(self) -> None:
        """Assert the structural invariants (non-randomized sets only)."""
        if self.randomized:
            raise ValueError("randomized dyad sets do not satisfy adjacency invariants")
        log = self.log
        assert (log.ts[self.partner_i] <= log.ts[self.focal_i]).all()
        assert (self.delay_s >= 0).all() and (self.delay_s <= 300).all()
        assert (log.person_idx[self.partner_i] != log.person_idx[self.focal_i]).all()
        assert (log.shop_idx[self.partner_i] == log.shop_idx[self.focal_i]).all()
        assert (log.register_idx[self.partner_i] == log.register_idx[self.focal_i]).all()
        assert (log.date_ord[self.partner_i] == log.date_ord[self.focal_i]).all()
        assert (self.daypart != Daypart.OUT_OF_WINDOW.value).all()

    def to_csv(self, dest: Union[str, os.PathLike, io.TextIOBase]) -> None:
        close = False
        if isinstance(dest, (str, os.PathLike)):
            dest = open(dest, "w", encoding="utf-8", newline="")
            close = True
        try:
            w = csv.writer(dest, lineterminator="\n")
            w.writerow(["partner_tx", "focal_tx", "shop_id", "register_id", "date", "daypart", "delay_s"])
            log = self.log
            dates = np.datetime_as_string(self.date_ord.astype("datetime64[D]"))
            shop = self.shop_idx
            reg = self.register_idx
            dp = self.daypart
            for k in range(self.n):
                w.writerow(
                    [
                        log.tx_ids[self.partner_i[k]],
                        log.tx_ids[self.focal_i[k]],
                        log.shops[shop[k]],
                        log.registers[reg[k]],
                        dates[k],
                        Daypart(int(dp[k])).label,
                        int(self.delay_s[k]),
                    ]
                )
        finally:
            if close:
                dest.close()

    @classmethod
    def from_csv(
        cls, source: Union[str, os.PathLike, io.TextIOBase], log: TransactionLog, randomized: bool = False
    ) -> "DyadSet":
        close = False
        if isinstance(source, (str, os.PathLike)):
            source = open(source, "r", encoding="utf-8", newline="")
            close = True
        try:
            reader = csv.reader(source)
            header = next(reader, None)
            partner, focal, delay = [], [], []
            for row in reader:
                if not row:
                    continue
                partner.append(log.index_of(row[0]))
                focal.append(log.index_of(row[1]))
                delay.append(int(row[6]))
            return cls(
                log,
                np.asarray(partner, np.int64),
                np.asarray(focal, np.int64),
                np.asarray(delay, np.int64),
                randomized,
            )
        finally:
            if close:
                source.close()


def extract_dyads(queues: Queues, max_gap_s: int = 300, require_anchor: bool = True) -> DyadSet:
    """Consecutive same-queue transactions by different persons within the gap.

    The middle of three transactions may serve as focal of one dyad and
    partner of the next.  Both sides must fall in the same studied daypart;
    with ``require_anchor`` both baskets must contain the daypart's anchor.
    """
    log = queues.log
    if log.n < 2:
        return DyadSet(log, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.int64))
    order = queues.order
    a = order[:-1]
    b = order[1:]
    same_queue = np.ones(a.shape[0], bool)
    same_queue[queues.start[1:-1] - 1] = False  # boundary between queues
    gap = log.ts[b] - log.ts[a]
    keep = (
        same_queue
        & (log.person_idx[a] != log.person_idx[b])
        & (gap <= max_gap_s)
        & (log.daypart[a] == log.daypart[b])
        & (log.daypart[a] != Daypart.OUT_OF_WINDOW.value)
    )
    if require_anchor:
        anchored = anchor_mask_arrays(log.mask, log.daypart)
        keep &= anchored[a] & anchored[b]
    return DyadSet(log, a[keep], b[keep], gap[keep])


def filter_frequent_pairs(dyads: DyadSet, min_count: int = 10) -> DyadSet:
    """Keep dyads whose unordered person pair occurs in >= min_count dyads."""
    if dyads.n == 0 or min_count <= 1:
        return dyads
    keys = dyads.pair_keys()
    _, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
    return dyads.subset(counts[inv] >= min_count)


def select_additions(
    dyads: DyadSet, catalog: ItemCatalog, min_fraction: float = 0.01
) -> dict[Daypart, list[str]]:
    """Addition categories whose treated fraction reaches the threshold,
    per daypart (fraction of the daypart's dyads whose partner bought it)."""
    out: dict[Daypart, list[str]] = {}
    dp = dyads.daypart
    for daypart in (Daypart.BREAKFAST, Daypart.LUNCH, Daypart.AFTERNOON):
        sel = dp == daypart.value
        total = int(sel.sum())
        if total == 0:
            continue
        chosen = []
        for key in ADDITION_KEYS:
            frac = float(dyads.partner_has(key)[sel].sum()) / total
            if frac >= min_fraction:
                chosen.append(key)
        if chosen:
            out[daypart] = chosen
    return out


@dataclass(frozen=True)
class TieStrength:
    pair: tuple[str, str]
    strength: float
    n_together: int
    n_either: int


def tie_strength(dyads: DyadSet, pair: tuple[str, str]) -> TieStrength:
    """Fraction of dyads containing the pair among dyads containing either."""
    a_id, b_id = sorted(pair)
    persons = dyads.log.persons
    index = {p: i for i, p in enumerate(persons)}
    if a_id not in index or b_id not in index:
        raise UndefinedPairError(f"pair ({a_id}, {b_id}) unknown to the log")
    a = index[a_id]
    b = index[b_id]
    pp = dyads.partner_person
    fp = dyads.focal_person
    in_a = (pp == a) | (fp == a)
    in_b = (pp == b) | (fp == b)
    together = int((in_a & in_b).sum())
    either = int((in_a | in_b).sum())
    if either == 0:
        raise UndefinedPairError(f"neither member of ({a_id}, {b_id}) appears in any dyad")
    return TieStrength((a_id, b_id), together / either, together, either)


def tie_strength_per_dyad(dyads: DyadSet) -> np.ndarray:
    """Tie strength of each dyad's own unordered pair, vectorized."""
    keys = dyads.pair_keys()
    uniq, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
    n_persons = len(dyads.log.persons)
    member = np.bincount(dyads.partner_person, minlength=n_persons) + np.bincount(
        dyads.focal_person, minlength=n_persons
    )
    lo = (uniq // n_persons).astype(np.int64)
    hi = (uniq % n_persons).astype(np.int64)
    either = member[lo] + member[hi] - counts
    return (counts / either)[inv]


@dataclass
class CoPurchaseMatrix:
    attribute: str
    labels: list[str]
    matrix: np.ndarray  # percentages, focal rows x partner columns
    n_used: int
    n_skipped: int


def age_tercile_label(age: int, cuts: tuple[int, int] = (22, 32)) -> str:
    lo, hi = cuts
    if age <= lo:
        return f"<={lo}"
    if age <= hi:
        return f"{lo + 1}-{hi}"
    return f">{hi}"


def _attribute_labels(attribute: str, cuts: tuple[int, int]) -> list[str]:
    if attribute == "gender":
        return ["female", "male"]
    if attribute == "status":
        return ["student", "staff", "other"]
    if attribute == "age_tercile":
        lo, hi = cuts
        return [f"<={lo}", f"{lo + 1}-{hi}", f">{hi}"]
    raise ValueError(f"unknown attribute {attribute!r}")


def _resolve_attribute(
    dyads: DyadSet, demographics: Demographics, attribute: str, side: str, cuts: tuple[int, int]
) -> list[Optional[str]]:
    log = dyads.log
    rows = dyads.partner_i if side == "partner" else dyads.focal_i
    years = log.year
    out: list[Optional[str]] = []
    for i in rows:
        pid = log.persons[log.person_idx[i]]
        rec = demographics.get(pid)
        if rec is None:
            out.append(None)
        elif attribute == "gender":
            out.append(rec.gender)
        elif attribute == "status":
            out.append(rec.status)
        else:
            if rec.birth_year is None:
                out.append(None)
            else:
                out.append(age_tercile_label(int(years[i]) - rec.birth_year, cuts))
    return out


def co_purchase_matrix(
    dyads: DyadSet,
    demographics: Demographics,
    attribute: str,
    age_cuts: tuple[int, int] = (22, 32),
) -> CoPurchaseMatrix:
    """Frequency matrix of (focal attribute x partner attribute) over dyads,
    as percentages of all dyads where both sides are known."""
    labels = _attribute_labels(attribute, age_cuts)
    index = {lab: i for i, lab in enumerate(labels)}
    pl = _resolve_attribute(dyads, demographics, attribute, "partner", age_cuts)
    fl = _resolve_attribute(dyads, demographics, attribute, "focal", age_cuts)
    counts = np.zeros((len(labels), len(labels)), np.int64)
    skipped = 0
    for p, f in zip(pl, fl):
        if p is None or f is None:
            skipped += 1
        else:
            counts[index[f], index[p]] += 1
    used = int(counts.sum())
    if used == 0:
        raise EmptyMatrixError(f"no dyad has {attribute} resolved on both sides")
    return CoPurchaseMatrix(attribute, labels, counts * 100.0 / used, used, skipped)
