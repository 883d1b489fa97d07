"""Status estimation from temporal activity patterns.

Persons are described only by when they transact (volume, active span,
month/weekday/hour distributions), never by what they buy, so downstream
purchase analyses stay uncontaminated.  A small bagged decision-tree
ensemble trained on the labeled subsample votes a status for everyone else.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import _kernels as K
from .errors import InsufficientLabelsError
from .model import TransactionLog

SECONDS_PER_YEAR = 365.25 * 86400.0

FEATURE_NAMES = (
    ["total_tx", "years_active"]
    + [f"month_{m:02d}" for m in range(1, 13)]
    + ["weekday_" + d for d in ("mon", "tue", "wed", "thu", "fri", "sat", "sun")]
    + [f"hour_{h:02d}" for h in range(24)]
)
N_FEATURES = len(FEATURE_NAMES)  # 45


@dataclass(frozen=True)
class FeatureVector:
    person_id: str
    total_tx: int
    years_active: float
    month_dist: tuple
    weekday_dist: tuple
    hour_dist: tuple

    def to_array(self) -> np.ndarray:
        return np.concatenate(
            (
                [float(self.total_tx), self.years_active],
                self.month_dist,
                self.weekday_dist,
                self.hour_dist,
            )
        )


def feature_matrix(
    log: TransactionLog, person_ids: Optional[Sequence[str]] = None
) -> tuple[list[str], np.ndarray]:
    """Feature rows for the given persons (default: everyone in the log)."""
    order, start = log.person_transactions()
    month = log.month - 1
    weekday = log.weekday
    hour = log.hour
    ts = log.ts
    if person_ids is None:
        person_ids = log.persons
    index = {p: i for i, p in enumerate(log.persons)}
    X = np.zeros((len(person_ids), N_FEATURES))
    for r, pid in enumerate(person_ids):
        p = index.get(pid)
        if p is None:
            raise KeyError(f"person {pid!r} has no transactions")
        rows = order[start[p] : start[p + 1]]
        n = rows.shape[0]
        if n == 0:
            raise KeyError(f"person {pid!r} has no transactions")
        X[r, 0] = n
        X[r, 1] = float(ts[rows[-1]] - ts[rows[0]]) / SECONDS_PER_YEAR
        X[r, 2:14] = np.bincount(month[rows], minlength=12) / n
        X[r, 14:21] = np.bincount(weekday[rows], minlength=7) / n
        X[r, 21:45] = np.bincount(hour[rows], minlength=24) / n
    return list(person_ids), X


def extract_features(log: TransactionLog, person_id: str) -> FeatureVector:
    _, X = feature_matrix(log, [person_id])
    row = X[0]
    return FeatureVector(
        person_id=person_id,
        total_tx=int(row[0]),
        years_active=float(row[1]),
        month_dist=tuple(row[2:14]),
        weekday_dist=tuple(row[14:21]),
        hour_dist=tuple(row[21:45]),
    )


# ---------------------------------------------------------------------------
# bagged trees
# ---------------------------------------------------------------------------


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    rows: np.ndarray,
    rng: np.random.Generator,
    max_depth: int,
    n_candidates: int,
    min_split: int,
) -> dict:
    feat, thr, left, right, label = [], [], [], [], []

    def build(rows: np.ndarray, depth: int) -> int:
        node = len(feat)
        ones = int(y[rows].sum())
        maj = 1 if ones * 2 > rows.shape[0] else 0
        feat.append(-1)
        thr.append(0.0)
        left.append(-1)
        right.append(-1)
        label.append(maj)
        if depth >= max_depth or rows.shape[0] < min_split or ones in (0, rows.shape[0]):
            return node
        cand = rng.choice(N_FEATURES, size=min(n_candidates, N_FEATURES), replace=False)
        best_score = -np.inf
        best = None
        for f in cand:
            xv = X[rows, f]
            srt = np.argsort(xv, kind="stable")
            score, idx = K.best_split(np.ascontiguousarray(xv[srt]), np.ascontiguousarray(y[rows][srt]))
            if idx >= 0 and score > best_score:
                best_score = score
                best = (int(f), float(xv[srt[idx]]))
        if best is None:
            return node
        f, t = best
        go = X[rows, f] <= t
        feat[node] = f
        thr[node] = t
        left[node] = build(rows[go], depth + 1)
        right[node] = build(rows[~go], depth + 1)
        return node

    build(rows, 0)
    return {
        "feat": np.asarray(feat, np.int64),
        "thr": np.asarray(thr, np.float64),
        "left": np.asarray(left, np.int64),
        "right": np.asarray(right, np.int64),
        "label": np.asarray(label, np.int64),
    }


def _tree_votes(tree: dict, X: np.ndarray) -> np.ndarray:
    """Class index per row, walking all rows one level at a time."""
    n = X.shape[0]
    node = np.zeros(n, np.int64)
    rows = np.arange(n)
    feat = tree["feat"]
    while True:
        f = feat[node]
        live = f >= 0
        if not live.any():
            break
        fl = f[live]
        goes_left = X[rows[live], fl] <= tree["thr"][node[live]]
        node[live] = np.where(goes_left, tree["left"][node[live]], tree["right"][node[live]])
    return tree["label"][node]


class StatusModel:
    """Bagged binary decision trees with majority-vote prediction."""

    FORMAT = "copycart-status-model"
    VERSION = 1

    def __init__(self, classes: list[str], trees: list[dict], metadata: dict, metrics: dict):
        self.classes = list(classes)
        self.trees = trees
        self.metadata = dict(metadata)
        self.metrics = dict(metrics)

    def predict(self, X: np.ndarray) -> tuple[list[str], np.ndarray]:
        """(labels, confidences); confidence is the winning vote fraction."""
        X = np.atleast_2d(np.asarray(X, np.float64))
        votes = np.zeros(X.shape[0], np.int64)
        for tree in self.trees:
            votes += _tree_votes(tree, X)
        n_trees = len(self.trees)
        second = votes * 2 > n_trees  # ties go to the first class
        labels = [self.classes[1] if s else self.classes[0] for s in second]
        conf = np.where(second, votes, n_trees - votes) / n_trees
        return labels, conf

    def to_json(self) -> dict:
        return {
            "format": self.FORMAT,
            "version": self.VERSION,
            "classes": self.classes,
            "metadata": self.metadata,
            "metrics": self.metrics,
            "trees": [{k: v.tolist() for k, v in t.items()} for t in self.trees],
        }

    @classmethod
    def from_json(cls, data: dict) -> "StatusModel":
        if data.get("format") != cls.FORMAT or data.get("version") != cls.VERSION:
            raise ValueError("unrecognized status model file")
        trees = [
            {
                "feat": np.asarray(t["feat"], np.int64),
                "thr": np.asarray(t["thr"], np.float64),
                "left": np.asarray(t["left"], np.int64),
                "right": np.asarray(t["right"], np.int64),
                "label": np.asarray(t["label"], np.int64),
            }
            for t in data["trees"]
        ]
        return cls(data["classes"], trees, data["metadata"], data["metrics"])

    def save(self, path: Union[str, os.PathLike]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, separators=(",", ":"), sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "StatusModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def _per_class_metrics(y_true: np.ndarray, y_pred: np.ndarray, classes: list[str]) -> dict:
    out = {}
    for c, name in enumerate(classes):
        tp = int(((y_pred == c) & (y_true == c)).sum())
        npred = int((y_pred == c).sum())
        nactual = int((y_true == c).sum())
        out[name] = {
            "precision": tp / npred if npred else 0.0,
            "recall": tp / nactual if nactual else 0.0,
            "support": nactual,
        }
    return out


def train_status_model(
    features: np.ndarray,
    labels: Sequence[str],
    holdout: float = 0.2,
    seed: int = 0,
    n_trees: int = 100,
    max_depth: int = 12,
    n_candidates: int = 6,
    min_split: int = 10,
    min_per_class: int = 50,
) -> StatusModel:
    """Train on a stratified split and report held-out per-class metrics."""
    X = np.asarray(features, np.float64)
    labels = list(labels)
    if X.shape[0] != len(labels):
        raise ValueError("features and labels differ in length")
    classes = sorted(set(labels))
    if len(classes) != 2:
        raise InsufficientLabelsError(f"need exactly 2 classes, got {classes}")
    y = np.asarray([classes.index(l) for l in labels], np.uint8)
    for c, name in enumerate(classes):
        if int((y == c).sum()) < min_per_class:
            raise InsufficientLabelsError(
                f"class {name!r} has {(y == c).sum()} examples; need {min_per_class}"
            )
    rng = np.random.default_rng(int(seed))
    test_idx = []
    for c in range(2):
        rows = np.nonzero(y == c)[0]
        perm = rng.permutation(rows.shape[0])
        n_hold = max(1, int(round(holdout * rows.shape[0])))
        test_idx.append(rows[perm[:n_hold]])
    test = np.sort(np.concatenate(test_idx))
    train_mask = np.ones(X.shape[0], bool)
    train_mask[test] = False
    train = np.nonzero(train_mask)[0]

    Xt = X[train]
    yt = y[train]
    trees = []
    for _ in range(n_trees):
        boot = rng.integers(0, Xt.shape[0], Xt.shape[0])
        trees.append(_grow_tree(Xt, yt, boot, rng, max_depth, n_candidates, min_split))

    model = StatusModel(
        classes,
        trees,
        metadata={
            "seed": int(seed),
            "n_trees": n_trees,
            "max_depth": max_depth,
            "n_candidates": n_candidates,
            "n_train": int(train.shape[0]),
            "n_holdout": int(test.shape[0]),
        },
        metrics={},
    )
    pred_labels, _ = model.predict(X[test])
    y_pred = np.asarray([classes.index(l) for l in pred_labels], np.uint8)
    model.metrics = _per_class_metrics(y[test], y_pred, classes)
    return model


def predict_status(model: StatusModel, features: Union[FeatureVector, np.ndarray]) -> tuple[str, float]:
    if isinstance(features, FeatureVector):
        features = features.to_array()
    labels, conf = model.predict(np.asarray(features, np.float64).reshape(1, -1))
    return labels[0], float(conf[0])


def write_predictions_csv(
    dest: Union[str, os.PathLike, io.TextIOBase],
    person_ids: Sequence[str],
    labels: Sequence[str],
    confidences: Sequence[float],
) -> None:
    close = False
    if isinstance(dest, (str, os.PathLike)):
        dest = open(dest, "w", encoding="utf-8", newline="")
        close = True
    try:
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(["person_id", "label", "confidence"])
        for pid, lab, c in zip(person_ids, labels, confidences):
            w.writerow([pid, lab, repr(float(c))])
    finally:
        if close:
            dest.close()
