"""Environmental context: per-(shop, date, daypart) category popularity.

Popularity of a category key in a cell is the fraction of ALL transactions
in that cell whose basket contains at least one item of the category; a
category is available in the cell iff its popularity is positive.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import os
from typing import Union

import numpy as np

from .model import CATEGORY_BIT, CATEGORY_KEYS, Daypart, ItemCatalog, TransactionLog

# cell key packing: (shop_idx << 40) | (date_ord << 2) | daypart
_DATE_SHIFT = 2
_SHOP_SHIFT = 40


def encode_cells(shop_idx: np.ndarray, date_ord: np.ndarray, daypart: np.ndarray) -> np.ndarray:
    return (
        (shop_idx.astype(np.int64) << _SHOP_SHIFT)
        | (date_ord.astype(np.int64) << _DATE_SHIFT)
        | daypart.astype(np.int64)
    )


class ContextStats:
    """Popularity/availability table over (shop, date, daypart) cells."""

    def __init__(self, keys: np.ndarray, n_tx: np.ndarray, pop: np.ndarray, shops: list[str]):
        self._keys = keys  # sorted unique encoded cells
        self._n = n_tx
        self._pop = pop  # [n_cells, len(CATEGORY_KEYS)]
        self._shops = list(shops)
        self._shop_index = {s: i for i, s in enumerate(shops)}

    @property
    def n_cells(self) -> int:
        return self._keys.shape[0]

    def _locate(self, key: int) -> int:
        i = int(np.searchsorted(self._keys, key))
        if i < self._keys.shape[0] and self._keys[i] == key:
            return i
        return -1

    def _key_of(self, shop_id: str, date, daypart: Daypart) -> int:
        shop = self._shop_index.get(shop_id)
        if shop is None:
            return -1
        if isinstance(date, str):
            date = dt.date.fromisoformat(date)
        if isinstance(date, (dt.date, dt.datetime)):
            date_ord = (dt.date(date.year, date.month, date.day) - dt.date(1970, 1, 1)).days
        else:
            date_ord = int(date)
        return (shop << _SHOP_SHIFT) | (date_ord << _DATE_SHIFT) | int(daypart)

    def popularity(self, shop_id: str, date, daypart: Daypart, category: str) -> float:
        i = self._locate(self._key_of(shop_id, date, daypart))
        return float(self._pop[i, CATEGORY_BIT[category]]) if i >= 0 else 0.0

    def available(self, shop_id: str, date, daypart: Daypart, category: str) -> bool:
        return self.popularity(shop_id, date, daypart, category) > 0.0

    def n_transactions(self, shop_id: str, date, daypart: Daypart) -> int:
        i = self._locate(self._key_of(shop_id, date, daypart))
        return int(self._n[i]) if i >= 0 else 0

    def popularity_for_cells(self, cell_keys: np.ndarray, category: str) -> np.ndarray:
        """Vectorized popularity lookup; absent cells give 0.0."""
        pos = np.searchsorted(self._keys, cell_keys)
        pos = np.minimum(pos, max(self._keys.shape[0] - 1, 0))
        out = np.zeros(cell_keys.shape[0], np.float64)
        if self._keys.shape[0] == 0:
            return out
        hit = self._keys[pos] == cell_keys
        out[hit] = self._pop[pos[hit], CATEGORY_BIT[category]]
        return out

    def counts_for_cells(self, cell_keys: np.ndarray, category: str) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized (cell size, category count) lookup; absent cells give 0."""
        n = np.zeros(cell_keys.shape[0], np.int64)
        cnt = np.zeros(cell_keys.shape[0], np.int64)
        if self._keys.shape[0] == 0:
            return n, cnt
        pos = np.searchsorted(self._keys, cell_keys)
        pos = np.minimum(pos, self._keys.shape[0] - 1)
        hit = self._keys[pos] == cell_keys
        n[hit] = self._n[pos[hit]]
        # popularity is stored as count/n; recover the integer count exactly
        cnt[hit] = np.rint(self._pop[pos[hit], CATEGORY_BIT[category]] * self._n[pos[hit]]).astype(np.int64)
        return n, cnt

    def to_csv(self, dest: Union[str, os.PathLike, io.TextIOBase]) -> None:
        close = False
        if isinstance(dest, (str, os.PathLike)):
            dest = open(dest, "w", encoding="utf-8", newline="")
            close = True
        try:
            w = csv.writer(dest, lineterminator="\n")
            w.writerow(["shop_id", "date", "daypart", "category", "popularity", "available", "n"])
            date_ord = (self._keys >> _DATE_SHIFT) & ((1 << (_SHOP_SHIFT - _DATE_SHIFT)) - 1)
            dates = np.datetime_as_string(date_ord.astype("datetime64[D]"))
            for i in range(self.n_cells):
                shop = self._shops[int(self._keys[i] >> _SHOP_SHIFT)]
                daypart = Daypart(int(self._keys[i] & 3)).label
                for cat in CATEGORY_KEYS:
                    p = float(self._pop[i, CATEGORY_BIT[cat]])
                    w.writerow([shop, dates[i], daypart, cat, repr(p), str(p > 0.0).lower(), int(self._n[i])])
        finally:
            if close:
                dest.close()


def compute_context(log: TransactionLog, catalog: ItemCatalog) -> ContextStats:
    """Build the popularity table from a validated log.

    The catalog argument fixes the studied category keys; basket membership
    itself is read from the masks the log already carries.
    """
    if log.n == 0:
        return ContextStats(np.empty(0, np.int64), np.empty(0, np.int64), np.empty((0, len(CATEGORY_KEYS))), log.shops)
    cells = encode_cells(log.shop_idx, log.date_ord, log.daypart)
    keys, inv, counts = np.unique(cells, return_inverse=True, return_counts=True)
    pop = np.empty((keys.shape[0], len(CATEGORY_KEYS)), np.float64)
    for cat, bit in CATEGORY_BIT.items():
        has = ((log.mask >> np.uint16(bit)) & np.uint16(1)).astype(np.int64)
        pop[:, bit] = np.bincount(inv, weights=has, minlength=keys.shape[0]) / counts
    return ContextStats(keys, counts.astype(np.int64), pop, log.shops)
