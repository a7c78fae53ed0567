from __future__ import annotations

import datetime as dt

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DATA
from gadle.errors import EmptySeries, InvalidRange, MalformedHeader, MalformedRow, NonMonotonicDates
from gadle.ingest import (
    DailyPriceMode,
    PriceBar,
    daily_price,
    load_price_csv,
    parse_price_csv,
    serialize_price_csv,
    slice_range,
)
from gadle.synth import geometric_walk

HEADER = "Date,Open,High,Low,Close,Adj Close,Volume\n"


def test_three_rows_parse():
    text = HEADER + (
        "2020-01-02,10,11,9,10.5,10.4,100\n"
        "2020-01-03,10.5,12,10,11,10.9,200\n"
        "2020-01-06,11,11.5,10.5,11.2,11.1,300\n"
    )
    s = parse_price_csv(text, "X")
    assert len(s) == 3
    assert s.dates == [dt.date(2020, 1, 2), dt.date(2020, 1, 3), dt.date(2020, 1, 6)]
    assert s[1].adj_close == 10.9 and s[2].volume == 300


def test_header_is_case_insensitive_and_rows_are_sorted():
    text = "date,OPEN,high,low,close,adj close,volume\n" + (
        "2020-01-03,10.5,12,10,11,10.9,200\n"
        "2020-01-02,10,11,9,10.5,10.4,100\n"
    )
    s = parse_price_csv(text.encode(), "X")
    assert s.dates == [dt.date(2020, 1, 2), dt.date(2020, 1, 3)]


def test_duplicate_date_rejected():
    text = HEADER + "2020-01-02,10,11,9,10.5,10.4,100\n2020-01-02,10,11,9,10.5,10.4,100\n"
    with pytest.raises(NonMonotonicDates):
        parse_price_csv(text, "X")


def test_null_close_rejected_at_its_line():
    with pytest.raises(MalformedRow) as info:
        load_price_csv(DATA / "null_close.csv")
    assert info.value.line == 8
    assert info.value.category == "MalformedRow"


def test_bar_outside_envelope_rejected():
    text = HEADER + "2020-01-02,10,11,9,12,12,100\n"
    with pytest.raises(MalformedRow):
        parse_price_csv(text, "X")


def test_missing_column_and_empty_file():
    with pytest.raises(MalformedHeader):
        parse_price_csv("Date,Open,High,Low,Close,Volume\n", "X")
    with pytest.raises(MalformedHeader):
        parse_price_csv("", "X")
    with pytest.raises(EmptySeries):
        parse_price_csv(HEADER, "X")


def test_daily_price_modes():
    bar = PriceBar(dt.date(2020, 1, 2), 100, 110, 90, 100, 98.5, 1)
    assert daily_price(bar, DailyPriceMode.OHLC4) == 100
    assert daily_price(bar, DailyPriceMode.HL2) == 100
    assert daily_price(bar, DailyPriceMode.ADJ_CLOSE) == 98.5
    for mode in DailyPriceMode:
        assert daily_price(bar, mode) > 0


def test_slice_range():
    s = geometric_walk(seed=4, start=dt.date(2000, 1, 3), end=dt.date(2020, 12, 31))
    assert slice_range(s, s.dates[0], s.dates[-1]) == s
    assert len(slice_range(s, dt.date(1990, 1, 1), dt.date(1990, 12, 31))) == 0
    y2020 = slice_range(s, dt.date(2020, 1, 1), dt.date(2020, 12, 31))
    assert len(y2020) == sum(d.year == 2020 for d in s.dates)
    assert all(d.year == 2020 for d in y2020.dates)
    with pytest.raises(InvalidRange):
        slice_range(s, dt.date(2020, 2, 1), dt.date(2020, 1, 1))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 80))
def test_serialize_round_trip(seed, n):
    s = geometric_walk(n, seed=seed, symbol="RT")
    again = parse_price_csv(serialize_price_csv(s), "RT")
    assert again == s


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 1000), a=st.integers(0, 120), b=st.integers(0, 120))
def test_slice_idempotent(seed, a, b):
    s = geometric_walk(120, seed=seed)
    lo, hi = sorted((s.dates[min(a, 119)], s.dates[min(b, 119)]))
    once = slice_range(s, lo, hi)
    assert slice_range(once, lo, hi) == once
