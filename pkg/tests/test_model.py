"""Domain model: dayparts, catalog, parsing, round-trips, demographics."""

import datetime as dt
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copycart import model as M
from copycart.errors import IngestError


def make_catalog():
    return M.ItemCatalog(
        {
            "MEALV": M.ItemCategory("anchor_meal", "vegetarian"),
            "MEALS": M.ItemCategory("anchor_meal", "non_vegetarian"),
            "COF": M.ItemCategory("anchor_beverage", "coffee"),
            "TEA": M.ItemCategory("anchor_beverage", "tea"),
            "DES": M.ItemCategory("addition", "dessert"),
            "FRU": M.ItemCategory("addition", "fruit"),
            "SOUP": M.ItemCategory("addition", "soup"),
            "MISC": M.ItemCategory("other"),
        }
    )


CATALOG = make_catalog()


# -- dayparts ----------------------------------------------------------------


def test_daypart_examples():
    assert M.daypart_of(dt.datetime(2018, 1, 5, 7, 30)) == M.Daypart.BREAKFAST
    assert M.daypart_of(dt.datetime(2018, 1, 5, 11, 0, 0)) == M.Daypart.LUNCH
    assert M.daypart_of(dt.datetime(2018, 1, 5, 21, 15)) == M.Daypart.OUT_OF_WINDOW


def test_daypart_boundaries():
    assert M.daypart_of_seconds(6 * 3600 - 1) == M.Daypart.OUT_OF_WINDOW
    assert M.daypart_of_seconds(6 * 3600) == M.Daypart.BREAKFAST
    assert M.daypart_of_seconds(11 * 3600) == M.Daypart.LUNCH
    assert M.daypart_of_seconds(14 * 3600 + 1800) == M.Daypart.AFTERNOON
    assert M.daypart_of_seconds(20 * 3600) == M.Daypart.OUT_OF_WINDOW


@given(st.integers(min_value=0, max_value=86399))
def test_daypart_total_and_matches_vector(secs):
    one = M.daypart_of_seconds(secs)
    assert one in list(M.Daypart)
    vec = M.dayparts_of_secs_array(np.asarray([secs]))
    assert vec[0] == one.value


# -- catalog and anchors -------------------------------------------------------


def test_catalog_roundtrip():
    buf = io.StringIO()
    CATALOG.to_csv(buf)
    text = buf.getvalue()
    again = M.ItemCatalog.from_csv(io.StringIO(text))
    buf2 = io.StringIO()
    again.to_csv(buf2)
    assert buf2.getvalue() == text
    assert "C17,anchor_beverage,coffee" not in text  # sanity: our codes only


def test_catalog_rejects_bad_rows():
    with pytest.raises(IngestError):
        M.ItemCatalog.from_csv(io.StringIO("X1,anchor_meal,weird\n"))
    with pytest.raises(IngestError):
        M.ItemCatalog.from_csv(io.StringIO("X1,addition,dessert\nX1,other,\n"))


def test_mask_bits():
    m = CATALOG.mask_of(["MEALV", "DES"])
    assert m & (1 << M.BIT_MEAL)
    assert m & (1 << M.BIT_MEAL_VEG)
    assert m & (1 << M.CATEGORY_BIT["dessert"])
    assert not m & (1 << M.BIT_COFFEE)
    assert CATALOG.mask_of(["MEALS"]) & (1 << M.BIT_MEAL_VEG) == 0
    assert CATALOG.mask_of(["UNKNOWN", "MISC"]) == 0


def test_anchor_of_examples():
    meal = M.anchor_of(["MEALS", "FRU"], M.Daypart.LUNCH, CATALOG)
    assert meal is not None and meal.kind == "anchor_meal"
    assert M.anchor_of(["DES"], M.Daypart.BREAKFAST, CATALOG) is None
    both = M.anchor_of(["COF", "TEA"], M.Daypart.AFTERNOON, CATALOG)
    assert both is not None and both.subtype == "coffee"
    # meal does not anchor outside lunch; beverage does not anchor at lunch
    assert M.anchor_of(["MEALS"], M.Daypart.BREAKFAST, CATALOG) is None
    assert M.anchor_of(["COF"], M.Daypart.LUNCH, CATALOG) is None
    veg_first = M.anchor_of(["MEALS", "MEALV"], M.Daypart.LUNCH, CATALOG)
    assert veg_first.subtype == "vegetarian"
    with pytest.raises(ValueError):
        M.anchor_of(["COF"], M.Daypart.OUT_OF_WINDOW, CATALOG)


# -- parsing -------------------------------------------------------------------

CSV_HEADER = "tx_id,person_id,timestamp,shop_id,register_id,items\n"


def parse_csv(rows: str):
    return M.parse_transactions(io.StringIO(CSV_HEADER + rows), CATALOG, fmt="csv")


def test_parse_empty_stream():
    log = M.parse_transactions(io.StringIO(""), CATALOG, fmt="csv")
    assert log.n == 0 and log.report.warnings == 0


def test_parse_three_records_one_unknown_code():
    log = parse_csv(
        "T1,P1,2018-01-05T12:01:00,S1,R1,MEALV;DES\n"
        "T2,P2,2018-01-05T12:02:00,S1,R1,MEALS;ZZZ\n"
        "T3,P3,2018-01-05T12:03:00,S1,R1,MEALV\n"
    )
    assert log.n == 3
    assert log.report.warnings == 1
    assert log.report.unknown_codes == {"ZZZ": 1}


def test_parse_bad_timestamp_is_record_level():
    log = parse_csv(
        "T1,P1,2018-13-01T09:00:00,S1,R1,COF\n"
        "T2,P2,2018-01-05T09:00:00,S1,R1,COF\n"
    )
    assert log.n == 1
    assert log.report.n_rejected == 1
    line, msg = log.report.errors[0]
    assert line == 2 and "timestamp" in msg


def test_parse_empty_basket_rejected():
    log = parse_csv("T1,P1,2018-01-05T09:00:00,S1,R1,\n")
    assert log.n == 0 and log.report.n_rejected == 1


def test_parse_duplicate_tx_fatal():
    with pytest.raises(IngestError):
        parse_csv(
            "T1,P1,2018-01-05T09:00:00,S1,R1,COF\n"
            "T1,P2,2018-01-05T09:05:00,S1,R1,TEA\n"
        )


def test_parse_jsonl_and_format_sniffing():
    rec = (
        '{"tx_id": "T1", "person_id": "P1", "timestamp": "2018-01-05T09:00:00",'
        ' "shop_id": "S1", "register_id": "R1", "items": ["COF"]}\n'
    )
    log = M.parse_transactions(io.StringIO(rec), CATALOG)
    assert log.n == 1
    assert log.baskets[0] == ("COF",)


def test_parse_sorts_canonically_and_dedupes_basket():
    log = parse_csv(
        "T2,P2,2018-01-05T09:00:00,S1,R1,TEA;TEA;COF\n"
        "T1,P1,2018-01-05T08:00:00,S1,R1,COF\n"
    )
    assert log.tx_ids == ["T1", "T2"]
    assert log.baskets[1] == ("COF", "TEA")


def test_equal_timestamps_ordered_by_tx_id():
    log = parse_csv(
        "TB,P2,2018-01-05T09:00:00,S1,R1,COF\n"
        "TA,P1,2018-01-05T09:00:00,S1,R1,TEA\n"
    )
    assert log.tx_ids == ["TA", "TB"]


def _random_log(rng: np.random.Generator, n: int):
    codes = list(CATALOG.codes())
    rows = []
    for i in range(n):
        items = rng.choice(codes, size=rng.integers(1, 4), replace=True)
        rows.append(
            f"T{i:04d},P{rng.integers(5)},2018-0{rng.integers(1, 9)}-1{rng.integers(0, 9)}"
            f"T{rng.integers(0, 23):02d}:{rng.integers(0, 59):02d}:{rng.integers(0, 59):02d},"
            f"S{rng.integers(2)},R{rng.integers(2)},{';'.join(items)}"
        )
    return parse_csv("\n".join(rows) + "\n")


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
def test_serialize_roundtrip_byte_identical(fmt):
    log = _random_log(np.random.default_rng(7), 60)
    buf = io.StringIO()
    M.serialize_transactions(log, buf, fmt=fmt)
    text = buf.getvalue()
    again = M.parse_transactions(io.StringIO(text), CATALOG, fmt=fmt)
    assert again == log
    buf2 = io.StringIO()
    M.serialize_transactions(again, buf2, fmt=fmt)
    assert buf2.getvalue() == text
    again.validate()


def test_derived_columns():
    log = parse_csv("T1,P1,2018-03-15T12:30:45,S1,R1,MEALV\n")
    assert log.year[0] == 2018
    assert log.month[0] == 3
    assert log.weekday[0] == 3  # 2018-03-15 was a Thursday
    assert log.hour[0] == 12
    assert log.daypart[0] == M.Daypart.LUNCH.value
    assert log.date_strings()[0] == "2018-03-15"


# -- demographics --------------------------------------------------------------


def test_demographics_parse_and_roundtrip():
    text = (
        "person_id,gender,status,birth_year\n"
        "P1,female,student,1996\n"
        "P2,,staff,\n"
        "P3,male,,1980\n"
    )
    demo = M.Demographics.from_csv(io.StringIO(text))
    assert demo.get("P2").gender is None
    assert demo.get("P2").status == "staff"
    assert demo.get("P3").birth_year == 1980
    buf = io.StringIO()
    demo.to_csv(buf)
    assert buf.getvalue() == text


def test_demographics_bad_values():
    with pytest.raises(IngestError):
        M.Demographics.from_csv(io.StringIO("person_id,gender,status,birth_year\nP1,robot,,\n"))


def test_demographics_birth_year_degrades():
    log = parse_csv("T1,P1,2018-01-05T12:00:00,S1,R1,MEALV\n")
    demo = M.Demographics(
        [M.PersonRecord("P1", "female", "student", 2020), M.PersonRecord("P2", None, None, 1990)]
    )
    out = demo.validated_against(log)
    assert out.get("P1").birth_year is None
    assert out.get("P1").status == "student"
    assert out.get("P2").birth_year == 1990
    assert out.n_birth_year_degraded == 1
