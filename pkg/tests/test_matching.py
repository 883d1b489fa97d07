"""Exact-key strata, popularity caliper, greedy 1:1 matching, balance."""

import io
import math

import numpy as np
import pytest

from copycart import model as M
from copycart.context import ContextStats, compute_context, encode_cells
from copycart.dyads import extract_dyads, reconstruct_queues
from copycart.errors import NoPairsError
from copycart.matching import (
    AdjustmentSpec,
    MatchedPairSet,
    balance_report,
    build_matched_pairs,
    smd,
)

from test_dyads import lunch_rows
from test_model import CATALOG, parse_csv


def make_context(log, cells):
    """Synthetic popularity table; cells = (shop, date, daypart, {cat: pop})."""
    keys, rows = [], []
    for shop, date, dp, popmap in cells:
        shop_i = log.shops.index(shop)
        date_ord = int(np.datetime64(date, "D").astype(np.int64))
        keys.append(int(encode_cells(np.asarray([shop_i]), np.asarray([date_ord]), np.asarray([dp.value]))[0]))
        row = np.zeros(len(M.CATEGORY_KEYS))
        row[M.CATEGORY_BIT["meal"]] = 1.0
        row[M.CATEGORY_BIT["meal_vegetarian"]] = 0.5
        for cat, p in popmap.items():
            row[M.CATEGORY_BIT[cat]] = p
        keys[-1] = keys[-1]
        rows.append(row)
    order = np.argsort(keys)
    return ContextStats(
        np.asarray(keys, np.int64)[order],
        np.full(len(keys), 100, np.int64),
        np.asarray(rows)[order],
        log.shops,
    )


def one_dyad_per_day(specs):
    """specs: (date, partner, partner_items, focal, focal_items); lunch, S1/R1."""
    text = "".join(
        lunch_rows([(f"P{i:03d}", p, 0, pi), (f"F{i:03d}", f, 60, fi)], day=day)
        for i, (day, p, pi, f, fi) in enumerate(specs)
    )
    log = parse_csv(text)
    dyads = extract_dyads(reconstruct_queues(log))
    assert dyads.n == len(specs)
    return log, dyads


def dessert_cells(log, specs, pops):
    return make_context(
        log,
        [(("S1"), day, M.Daypart.LUNCH, {"dessert": pop}) for (day, *_), pop in zip(specs, pops)],
    )


def tx_pairs(pairs):
    log = pairs.dyads.log
    d = pairs.dyads
    return [
        (log.tx_ids[d.partner_i[t]], log.tx_ids[d.partner_i[c]])
        for t, c in zip(pairs.treated_idx, pairs.control_idx)
    ]


def test_caliper_selects_nearest_inside():
    specs = [
        ("2018-01-01", "A", "MEALV;DES", "B", "MEALS"),
        ("2018-01-02", "A", "MEALV", "B", "MEALS"),
        ("2018-01-03", "A", "MEALV", "B", "MEALS"),
    ]
    log, dyads = one_dyad_per_day(specs)
    ctx = dessert_cells(log, specs, [0.20, 0.30, 0.21])
    pairs = build_matched_pairs(dyads, "dessert", ctx)
    # (0.30-0.20)/0.30 = 1/3 violates the 0.10 caliper; 0.21 is in and nearest
    assert pairs.n == 1
    assert tx_pairs(pairs) == [("P000", "P002")]
    assert pairs.pop_t[0] == pytest.approx(0.20)
    assert pairs.pop_c[0] == pytest.approx(0.21)
    assert pairs.n_treated_total == 1 and pairs.n_unmatched == 0


def test_caliper_relative_boundary_and_absolute_mode():
    specs = [
        ("2018-01-01", "A", "MEALV;DES", "B", "MEALS"),
        ("2018-01-02", "A", "MEALV", "B", "MEALS"),
    ]
    log, dyads = one_dyad_per_day(specs)
    ctx = dessert_cells(log, specs, [0.5, 0.45])
    # |0.5-0.45| / max = 0.05/0.5 = 0.10: the boundary is inclusive
    assert build_matched_pairs(dyads, "dessert", ctx).n == 1
    tight = AdjustmentSpec(caliper=0.09)
    assert build_matched_pairs(dyads, "dessert", ctx, tight).n == 0
    loose_abs = AdjustmentSpec(caliper=0.09, caliper_absolute=True)
    assert build_matched_pairs(dyads, "dessert", ctx, loose_abs).n == 1


def test_exact_keys_separate_strata():
    # control with identical popularity but a different partner person
    specs = [
        ("2018-01-01", "A", "MEALV;DES", "B", "MEALS"),
        ("2018-01-02", "C", "MEALV", "B", "MEALS"),
    ]
    log, dyads = one_dyad_per_day(specs)
    ctx = dessert_cells(log, specs, [0.20, 0.20])
    pairs = build_matched_pairs(dyads, "dessert", ctx)
    assert pairs.n == 0 and pairs.n_unmatched == 1 and pairs.n_treated_total == 1


def test_daypart_separates_strata():
    rows = (
        "P0,A,2018-01-01T12:00:00,S1,R1,MEALV;DES\n"
        "F0,B,2018-01-01T12:01:00,S1,R1,MEALS\n"
        "P1,A,2018-01-02T08:00:00,S1,R1,COF\n"
        "F1,B,2018-01-02T08:01:00,S1,R1,COF\n"
    )
    log = parse_csv(rows)
    dyads = extract_dyads(reconstruct_queues(log))
    assert dyads.n == 2
    ctx = make_context(
        log,
        [
            ("S1", "2018-01-01", M.Daypart.LUNCH, {"dessert": 0.2}),
            ("S1", "2018-01-02", M.Daypart.BREAKFAST, {"dessert": 0.2, "coffee": 0.9}),
        ],
    )
    assert build_matched_pairs(dyads, "dessert", ctx).n == 0


def test_match_focal_identity_flag():
    specs = [
        ("2018-01-01", "A", "MEALV;DES", "B", "MEALS"),
        ("2018-01-02", "A", "MEALV", "C", "MEALS"),  # exact pop, other focal
        ("2018-01-03", "A", "MEALV", "B", "MEALS"),  # same focal, pop off by 5%
    ]
    log, dyads = one_dyad_per_day(specs)
    ctx = dessert_cells(log, specs, [0.20, 0.20, 0.19])
    assert tx_pairs(build_matched_pairs(dyads, "dessert", ctx)) == [("P000", "P001")]
    strict = AdjustmentSpec(match_focal_identity=True)
    assert tx_pairs(build_matched_pairs(dyads, "dessert", ctx, strict)) == [("P000", "P002")]


def test_match_exact_anchor_flag():
    specs = [
        ("2018-01-01", "A", "MEALV;DES", "B", "MEALV"),
        ("2018-01-02", "A", "MEALS", "B", "MEALV"),  # non-veg partner anchor
        ("2018-01-03", "A", "MEALV", "B", "MEALV"),
    ]
    log, dyads = one_dyad_per_day(specs)
    ctx = dessert_cells(log, specs, [0.20, 0.20, 0.19])
    assert tx_pairs(build_matched_pairs(dyads, "dessert", ctx)) == [("P000", "P001")]
    strict = AdjustmentSpec(match_exact_anchor=True)
    assert tx_pairs(build_matched_pairs(dyads, "dessert", ctx, strict)) == [("P000", "P002")]


def test_greedy_order_no_reuse_injective():
    specs = [
        ("2018-01-01", "A", "MEALV;DES", "B", "MEALS"),  # treated, earlier date
        ("2018-01-02", "A", "MEALV;DES", "B", "MEALS"),  # treated, later date
        ("2018-01-03", "A", "MEALV", "B", "MEALS"),  # control pop 0.20
        ("2018-01-04", "A", "MEALV", "B", "MEALS"),  # control pop 0.22
        ("2018-01-05", "A", "MEALV;DES", "B", "MEALS"),  # treated, no control left
    ]
    log, dyads = one_dyad_per_day(specs)
    ctx = dessert_cells(log, specs, [0.20, 0.20, 0.20, 0.22, 0.20])
    pairs = build_matched_pairs(dyads, "dessert", ctx)
    # both treated prefer the 0.20 control; the earlier-dated treated wins it
    assert tx_pairs(pairs) == [("P000", "P002"), ("P001", "P003")]
    assert pairs.n_treated_total == 3 and pairs.n_unmatched == 1
    assert len(set(pairs.control_idx.tolist())) == pairs.n
    assert len(set(pairs.treated_idx.tolist())) == pairs.n


def test_unavailable_item_excludes_dyads():
    specs = [
        ("2018-01-01", "A", "MEALV;DES", "B", "MEALS"),
        ("2018-01-02", "A", "MEALV", "B", "MEALS"),
        ("2018-01-03", "A", "MEALV;DES", "B", "MEALS"),
    ]
    log, dyads = one_dyad_per_day(specs)
    ctx = dessert_cells(log, specs, [0.20, 0.0, 0.0])
    pairs = build_matched_pairs(dyads, "dessert", ctx)
    # the only control sits in a cell without the item; one treated also drops
    assert pairs.n == 0
    assert pairs.n_treated_total == 1 and pairs.n_unmatched == 1


def test_anchorless_dyads_never_match():
    # focal without the lunch anchor: dyad is ineligible even if extraction
    # was run permissively
    specs = [("2018-01-01", "A", "MEALV;DES", "B", "MEALS")]
    rows = lunch_rows([("P0", "A", 0, "MEALV;DES"), ("F0", "B", 60, "DES")], day="2018-01-01")
    log = parse_csv(rows)
    dyads = extract_dyads(reconstruct_queues(log), require_anchor=False)
    assert dyads.n == 1
    ctx = dessert_cells(log, specs, [0.5])
    pairs = build_matched_pairs(dyads, "dessert", ctx)
    assert pairs.n == 0 and pairs.n_treated_total == 0


def test_matching_deterministic_and_order_independent():
    specs = [
        (f"2018-01-{d:02d}", "A", "MEALV;DES" if d % 2 else "MEALV", "B", "MEALS")
        for d in range(1, 21)
    ]
    log, dyads = one_dyad_per_day(specs)
    pops = [0.2 + 0.001 * d for d in range(20)]
    ctx = dessert_cells(log, specs, pops)
    first = build_matched_pairs(dyads, "dessert", ctx)
    again = build_matched_pairs(dyads, "dessert", ctx)
    assert np.array_equal(first.treated_idx, again.treated_idx)
    assert np.array_equal(first.control_idx, again.control_idx)
    # feeding the dyads in reverse row order must give the same pairs
    rev = dyads.subset(np.arange(dyads.n)[::-1])
    flipped = build_matched_pairs(rev, "dessert", ctx)
    assert tx_pairs(flipped) == tx_pairs(first)


def test_matched_csv_roundtrip():
    specs = [
        ("2018-01-01", "A", "MEALV;DES", "B", "MEALS"),
        ("2018-01-02", "A", "MEALV", "B", "MEALS"),
        ("2018-01-03", "A", "MEALV;DES", "C", "MEALS"),
        ("2018-01-04", "A", "MEALV", "C", "MEALS"),
    ]
    log, dyads = one_dyad_per_day(specs)
    ctx = dessert_cells(log, specs, [0.20, 0.20, 0.30, 0.31])
    pairs = build_matched_pairs(dyads, "dessert", ctx)
    assert pairs.n == 2
    buf = io.StringIO()
    pairs.to_csv(buf)
    text = buf.getvalue()
    assert text.splitlines()[0] == (
        "item,treated_partner_tx,treated_focal_tx,control_partner_tx,"
        "control_focal_tx,popularity_t,popularity_c"
    )
    back = MatchedPairSet.from_csv(io.StringIO(text), dyads)["dessert"]
    assert np.array_equal(back.treated_idx, pairs.treated_idx)
    assert np.array_equal(back.control_idx, pairs.control_idx)
    assert np.array_equal(back.pop_t, pairs.pop_t)
    buf2 = io.StringIO()
    back.to_csv(buf2)
    assert buf2.getvalue() == text


def test_smd_cases():
    assert smd(np.asarray([1.0, 2, 3]), np.asarray([0.0, 1, 2])) == pytest.approx(1.0)
    assert smd(np.asarray([1.0, 2, 3]), np.asarray([1.0, 2, 3])) == 0.0
    assert smd(np.asarray([2.0, 2.0]), np.asarray([1.0, 1.0])) == math.inf
    assert smd(np.asarray([1.0, 1.0]), np.asarray([2.0, 2.0])) == -math.inf
    assert smd(np.asarray([3.0, 3.0]), np.asarray([3.0, 3.0])) == 0.0
    assert math.isnan(smd(np.asarray([1.0]), np.asarray([1.0, 2.0])))


def test_smd_matches_definition():
    rng = np.random.default_rng(7)
    t = rng.normal(0.3, 1.0, 40)
    c = rng.normal(0.0, 1.2, 55)
    expect = (t.mean() - c.mean()) / math.sqrt((t.var(ddof=1) + c.var(ddof=1)) / 2)
    assert smd(t, c) == pytest.approx(expect, rel=1e-12)


def test_balance_report_fields_and_failure():
    specs = [
        ("2018-01-01", "A", "MEALV;DES", "B", "MEALS"),
        ("2018-01-02", "A", "MEALV;DES", "B", "MEALS"),
        ("2018-01-03", "A", "MEALV", "B", "MEALS"),
        ("2018-01-04", "A", "MEALV", "B", "MEALS"),
    ]
    log, dyads = one_dyad_per_day(specs)
    ctx = dessert_cells(log, specs, [0.20, 0.20, 0.20, 0.22])
    pairs = build_matched_pairs(dyads, "dessert", ctx)
    assert pairs.n == 2
    rep = balance_report(pairs)
    d = rep.to_dict()
    assert set(d["covariates"]) == {
        "popularity",
        "delay_s",
        "time_of_day_s",
        "partner_basket_size",
        "focal_basket_size",
    }
    # popularity after: t = (.20, .20), c = (.20, .22) -> smd = -1.0
    assert d["covariates"]["popularity"]["after"] == pytest.approx(-1.0)
    assert d["pass"] is False
    # identical delays/sizes across arms are balanced exactly
    assert d["covariates"]["delay_s"]["after"] == 0.0

    buf = io.StringIO()
    pairs.to_csv(buf)
    loaded = MatchedPairSet.from_csv(io.StringIO(buf.getvalue()), dyads)["dessert"]
    with pytest.raises(ValueError):
        balance_report(loaded)  # reloaded sets lack the eligibility pools


def test_balance_report_passing_case():
    specs = []
    for d in range(1, 13):
        # basket sizes match across arms once the focus item is discounted
        items = "MEALV;DES" if d % 2 else "MEALV"
        specs.append((f"2018-01-{d:02d}", "A", items, "B", "MEALS"))
    log, dyads = one_dyad_per_day(specs)
    ctx = dessert_cells(log, specs, [0.2] * 12)
    pairs = build_matched_pairs(dyads, "dessert", ctx)
    assert pairs.n == 6
    rep = balance_report(pairs)
    assert rep.passed
    with pytest.raises(NoPairsError):
        balance_report(pairs.subset(np.zeros(pairs.n, bool)))


def test_adjustment_spec_validation():
    with pytest.raises(ValueError):
        AdjustmentSpec(caliper=0.0)
    with pytest.raises(ValueError):
        AdjustmentSpec(caliper=1.0)


def test_popularity_from_computed_context():
    # end-to-end: popularity derived from the log itself, not synthetic
    rows = []
    # cell 2018-01-01: dyad A->B plus two fillers, one with dessert: pop 1/2
    rows.append(lunch_rows([("P0", "A", 0, "MEALV;DES"), ("F0", "B", 60, "MEALS")], day="2018-01-01"))
    rows.append(lunch_rows([("X0", "X", 3600, "MEALV;DES"), ("X1", "Y", 5400, "MEALS")], day="2018-01-01"))
    # cell 2018-01-02: dyad A->B plus two fillers with dessert: pop 1/2
    rows.append(lunch_rows([("P1", "A", 0, "MEALV"), ("F1", "B", 60, "MEALS")], day="2018-01-02"))
    rows.append(lunch_rows([("X2", "X", 3600, "MEALV;DES"), ("X3", "Y", 5400, "MEALS;DES")], day="2018-01-02"))
    log = parse_csv("".join(rows))
    ctx = compute_context(log, CATALOG)
    assert ctx.popularity("S1", "2018-01-01", M.Daypart.LUNCH, "dessert") == pytest.approx(0.5)
    dyads = extract_dyads(reconstruct_queues(log))
    sel = np.asarray([log.tx_ids[i].startswith(("P", "F")) for i in dyads.partner_i])
    dyads = dyads.subset(sel & np.asarray([log.tx_ids[i].startswith("F") for i in dyads.focal_i]))
    assert dyads.n == 2
    pairs = build_matched_pairs(dyads, "dessert", ctx)
    assert pairs.n == 1
    assert pairs.pop_t[0] == pairs.pop_c[0] == pytest.approx(0.5)


def test_exclude_own_transactions_uses_leave_dyad_out_popularity():
    rows = []
    # treated cell: dyad partner has dessert, one filler of two has dessert.
    # cell-wide 2/4; without the dyad's own rows (2-1)/(4-2) = 1/2
    rows.append(lunch_rows([("P0", "A", 0, "MEALV;DES"), ("F0", "B", 60, "MEALS")], day="2018-01-01"))
    rows.append(lunch_rows([("X0", "X", 3600, "MEALV;DES"), ("X1", "Y", 5400, "MEALS")], day="2018-01-01"))
    # control cell: dyad without dessert, one filler of two has dessert.
    # cell-wide 1/4; leave-dyad-out 1/2
    rows.append(lunch_rows([("P1", "A", 0, "MEALV"), ("F1", "B", 60, "MEALS")], day="2018-01-02"))
    rows.append(lunch_rows([("X2", "X", 3600, "MEALV;DES"), ("X3", "Y", 5400, "MEALS")], day="2018-01-02"))
    log = parse_csv("".join(rows))
    ctx = compute_context(log, CATALOG)
    dyads = extract_dyads(reconstruct_queues(log))
    sel = np.asarray(
        [log.tx_ids[p].startswith("P") and log.tx_ids[f].startswith("F")
         for p, f in zip(dyads.partner_i, dyads.focal_i)]
    )
    dyads = dyads.subset(sel)
    assert dyads.n == 2

    # raw cell shares: |0.5 - 0.25| / 0.5 = 0.5 breaches the caliper
    raw = build_matched_pairs(dyads, "dessert", ctx)
    assert raw.n == 0

    loo = build_matched_pairs(
        dyads, "dessert", ctx, AdjustmentSpec(exclude_own_transactions=True)
    )
    assert loo.n == 1
    assert loo.pop_t[0] == loo.pop_c[0] == pytest.approx(0.5)
