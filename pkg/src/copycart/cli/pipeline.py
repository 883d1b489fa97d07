"""Full analysis pipeline: ingest through results.json, CSVs, and plots.

Every stage writes its intermediate dump so any sub-stage can be rerun from
disk and reproduce downstream outputs byte for byte.  All randomness derives
from the single config seed and the analysis's name, never from scheduling,
so per-item threads cannot change any number.
"""

from __future__ import annotations

import csv
import importlib.resources
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import jsonschema
import numpy as np

from .. import baseline as B
from .. import estimate as E
from .. import sensitivity as S
from ..context import compute_context
from ..dyads import extract_dyads, filter_frequent_pairs, reconstruct_queues, select_additions
from ..errors import (
    InsufficientBinsError,
    InsufficientDataError,
    NoPairsError,
)
from ..infer import feature_matrix, train_status_model, write_predictions_csv
from ..matching import balance_report, build_matched_pairs
from ..model import (
    Demographics,
    ItemCatalog,
    PersonRecord,
    TransactionLog,
    parse_transactions,
)
from .._util import derive_seed
from .config import RunConfig
from .plots import emit_plots

RESULTS_VERSION = 1


def _jsonable(value):
    """Drop non-finite floats to null so results.json stays valid JSON."""
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def load_schema() -> dict:
    ref = importlib.resources.files("copycart.cli") / "schema" / "results.schema.json"
    return json.loads(ref.read_text(encoding="utf-8"))


def ingest_inputs(cfg: RunConfig) -> tuple[TransactionLog, ItemCatalog, Optional[Demographics]]:
    catalog = ItemCatalog.from_csv(cfg.catalog)
    log = parse_transactions(cfg.transactions, catalog)
    demo = Demographics.from_csv(cfg.demographics) if cfg.demographics else None
    return log, catalog, demo


def _status_stage(log, cfg: RunConfig, demo: Demographics):
    """Train on labeled student/staff persons, predict the rest.

    Predicted labels fill only missing statuses; persons labeled with a
    non-studied status keep their label.
    """
    in_log = set(log.persons)
    labeled = [
        r.person_id
        for r in demo.records()
        if r.status in ("student", "staff") and r.person_id in in_log
    ]
    ids, X = feature_matrix(log, labeled)
    model = train_status_model(
        X, [demo.status_of(p) for p in ids], seed=int(derive_seed(cfg.seed, "infer"))
    )
    unknown = [p for p in log.persons if demo.status_of(p) is None]
    predictions = ([], [], [])
    overrides = {}
    if unknown:
        u_ids, u_X = feature_matrix(log, unknown)
        labels, conf = model.predict(u_X)
        predictions = (list(u_ids), list(labels), conf.tolist())
        overrides = dict(zip(u_ids, labels))
    records = []
    for r in demo.records():
        records.append(r)
    known_ids = {r.person_id for r in records}
    merged = [
        r
        if r.status is not None or r.person_id not in overrides
        else PersonRecord(r.person_id, r.gender, overrides[r.person_id], r.birth_year)
        for r in records
    ]
    merged += [
        PersonRecord(pid, None, overrides[pid], None)
        for pid in sorted(set(overrides) - known_ids)
    ]
    summary = {
        "classes": model.classes,
        "metrics": model.metrics,
        "n_labeled": len(ids),
        "n_predicted": len(predictions[0]),
    }
    return Demographics(merged), summary, predictions, model


def _analyze_item(item, dyads, ctx, demo, cfg: RunConfig) -> tuple[dict, object]:
    """All enabled analyses for one focus item; returns (report, pairs)."""
    seed = cfg.seed
    pairs = build_matched_pairs(dyads, item, ctx, cfg.adjustment)
    if pairs.n == 0:
        return {"item": item, "status": "no_pairs", "n_treated_total": pairs.n_treated_total}, None
    est = E.effect_estimate(pairs, cfg.n_boot, int(derive_seed(seed, "item", item)))
    report = {
        "item": item,
        "status": "ok",
        "n_treated_total": pairs.n_treated_total,
        "n_unmatched": pairs.n_unmatched,
        "estimate": est.to_dict(),
        "naive_rd": E.naive_risk_difference(dyads, item),
        "balance": balance_report(pairs).to_dict(),
        "baseline": None,
        "sensitivity": None,
        "dose_response": None,
        "coordination": None,
        "subgroups": None,
    }
    if cfg.baseline:
        rnd = B.randomize_partners(dyads, int(derive_seed(seed, "item", item, "shuffle")))
        rnd_pairs = build_matched_pairs(rnd, item, ctx, cfg.adjustment)
        if rnd_pairs.n == 0:
            report["baseline"] = {"status": "no_pairs"}
        else:
            b_est = E.effect_estimate(
                rnd_pairs, cfg.n_boot, int(derive_seed(seed, "item", item, "baseline"))
            )
            report["baseline"] = b_est.to_dict(stratum="baseline")
    if cfg.sensitivity:
        try:
            report["sensitivity"] = S.sensitivity_result(est.counts, cfg.alpha, item).to_dict()
        except NoPairsError:
            report["sensitivity"] = {"status": "no_discordant"}
    if cfg.dose_response:
        try:
            report["dose_response"] = E.dose_response(
                pairs, n_rep=cfg.n_boot, seed=int(derive_seed(seed, "item", item, "dose"))
            ).to_dict()
        except (NoPairsError, InsufficientBinsError) as err:
            report["dose_response"] = {"status": type(err).__name__, "detail": str(err)}
    if cfg.coordination:
        try:
            report["coordination"] = B.coordination_test(
                dyads, item, seed=int(derive_seed(seed, "item", item, "coordination"))
            ).to_dict()
        except InsufficientDataError as err:
            report["coordination"] = {"status": "insufficient_data", "detail": str(err)}
    if cfg.subgroups:
        groups = {}
        for grouping in cfg.subgroups:
            ests = E.subgroup_estimates(
                pairs,
                grouping,
                demographics=demo,
                n_rep=cfg.n_boot,
                seed=int(derive_seed(seed, "item", item, "subgroup")),
                min_pairs=cfg.min_stratum,
            )
            groups[grouping] = {
                label: e.to_dict(stratum=f"{grouping}:{label}") for label, e in ests.items()
            }
        report["subgroups"] = groups
    return report, pairs


def _write_estimates_csv(path, results: dict) -> None:
    cols = [
        "item", "stratum", "n_pairs", "rd", "rd_lo", "rd_hi",
        "rr", "rr_lo", "rr_hi", "chi2", "p", "naive_rd", "status",
    ]

    def fmt(x):
        return "" if x is None else repr(float(x))

    def row(est: dict, naive=None, status="ok"):
        rd_ci = est.get("rd_ci") or (None, None)
        rr_ci = est.get("rr_ci") or (None, None)
        return [
            est["item"], est["stratum"], est["n_pairs"],
            fmt(est["rd"]), fmt(rd_ci[0]), fmt(rd_ci[1]),
            fmt(est["rr"]), fmt(rr_ci[0]), fmt(rr_ci[1]),
            fmt(est["chi2"]), fmt(est["p"]),
            fmt(naive), status,
        ]

    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for item in results["items"]:
            if item["status"] != "ok":
                w.writerow([item["item"], "pooled", 0] + [""] * 9 + ["no_pairs"])
                continue
            w.writerow(row(item["estimate"], naive=item["naive_rd"]))
            if isinstance(item.get("baseline"), dict) and "rd" in (item["baseline"] or {}):
                w.writerow(row(item["baseline"]))
            for grouping in item.get("subgroups") or {}:
                for est in item["subgroups"][grouping].values():
                    w.writerow(row(est))
        for attr, est in (results.get("anchor_mimicry") or {}).items():
            if "rd" in est:
                w.writerow(row(dict(est, stratum=f"anchor:{attr}")))


@dataclass
class RunReport:
    results: dict
    paths: dict
    balance_ok: bool


def run_pipeline(cfg: RunConfig) -> RunReport:
    cfg.validate_paths()
    os.makedirs(cfg.out, exist_ok=True)
    paths = {k: os.path.join(cfg.out, v) for k, v in {
        "results": "results.json",
        "estimates": "estimates.csv",
        "context": "context.csv",
        "dyads": "dyads.csv",
        "pairs_dir": "matched_pairs",
        "plots_dir": "plots",
        "predictions": "predictions.csv",
    }.items()}

    log, catalog, demo = ingest_inputs(cfg)
    ctx = compute_context(log, catalog)
    ctx.to_csv(paths["context"])

    raw = extract_dyads(
        reconstruct_queues(log), max_gap_s=cfg.max_gap_s, require_anchor=cfg.require_anchor
    )
    dyads = filter_frequent_pairs(raw, cfg.min_pair_count)
    dyads.to_csv(paths["dyads"])

    status_summary = None
    if cfg.infer_status:
        demo, status_summary, predictions, _model = _status_stage(log, cfg, demo)
        write_predictions_csv(paths["predictions"], *predictions)

    per_daypart = select_additions(dyads, catalog, cfg.min_fraction)
    items = sorted({i for lst in per_daypart.values() for i in lst})

    def job(item):
        return _analyze_item(item, dyads, ctx, demo, cfg)

    if cfg.threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            analyzed = list(pool.map(job, items))
    else:
        analyzed = [job(item) for item in items]

    os.makedirs(paths["pairs_dir"], exist_ok=True)
    item_reports = []
    balance_ok = True
    for (report, pairs), item in zip(analyzed, items):
        item_reports.append(report)
        if pairs is not None:
            pairs.to_csv(os.path.join(paths["pairs_dir"], f"{item}.csv"))
            balance_ok &= bool(report["balance"]["pass"])

    anchor = None
    if cfg.anchor_mimicry:
        anchor = {}
        for attr in ("meal_vegetarian", "beverage_kind"):
            try:
                est = E.anchor_mimicry(
                    dyads, ctx, attr, spec=cfg.adjustment, n_rep=cfg.n_boot, seed=cfg.seed
                )
                anchor[attr] = est.to_dict(stratum=f"anchor:{attr}")
            except NoPairsError:
                anchor[attr] = {"status": "no_pairs"}

    results = _jsonable({
        "version": RESULTS_VERSION,
        "seed": cfg.seed,
        "alpha": cfg.alpha,
        "counts": {
            "n_transactions": log.n,
            "n_persons": len(log.persons),
            "n_dyads_raw": raw.n,
            "n_dyads": dyads.n,
            "n_rejected_records": log.report.n_rejected,
        },
        "items": item_reports,
        "anchor_mimicry": anchor,
        "status_inference": status_summary,
        "balance_ok": balance_ok,
    })
    jsonschema.validate(results, load_schema())
    with open(paths["results"], "w", encoding="utf-8") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_estimates_csv(paths["estimates"], results)
    emit_plots(results, paths["plots_dir"])
    return RunReport(results=results, paths=paths, balance_ok=balance_ok)
