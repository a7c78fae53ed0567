"""Parsing, validation and slicing of daily price bars.

The CSV layout is the Yahoo Finance daily-history export::

    Date,Open,High,Low,Close,Adj Close,Volume

Trading days are simply the rows present in the file; no holiday calendar
is consulted.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptySeries,
    InvalidRange,
    MalformedHeader,
    MalformedRow,
    NonMonotonicDates,
)

COLUMNS = ("Date", "Open", "High", "Low", "Close", "Adj Close", "Volume")
_PRICE_FIELDS = ("open", "high", "low", "close", "adj_close")


class DailyPriceMode(str, enum.Enum):
    """Which single number represents a trading day."""

    ADJ_CLOSE = "adj_close"
    OHLC4 = "ohlc4"
    HL2 = "hl2"

    @classmethod
    def parse(cls, value: "str | DailyPriceMode") -> "DailyPriceMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace(" ", "_")
        for mode in cls:
            if key in (mode.value, mode.name.lower()):
                return mode
        raise ValueError(f"unknown daily price mode {value!r}")


DEFAULT_MODE = DailyPriceMode.OHLC4


@dataclass(frozen=True)
class PriceBar:
    date: dt.date
    open: float
    high: float
    low: float
    close: float
    adj_close: float
    volume: int

    def problems(self) -> list[str]:
        """Return the list of violated bar invariants (empty when valid)."""
        out = []
        for name in _PRICE_FIELDS:
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                out.append(f"{name} must be finite and > 0, got {v!r}")
        if out:
            return out
        if self.low > self.high:
            out.append("low > high")
        if not self.low <= self.open <= self.high:
            out.append("open outside [low, high]")
        if not self.low <= self.close <= self.high:
            out.append("close outside [low, high]")
        if self.volume < 0:
            out.append("negative volume")
        return out


@dataclass(frozen=True)
class PriceSeries:
    symbol: str
    bars: tuple[PriceBar, ...]

    def __post_init__(self):
        object.__setattr__(self, "bars", tuple(self.bars))
        for prev, cur in zip(self.bars, self.bars[1:]):
            if cur.date <= prev.date:
                raise NonMonotonicDates(
                    f"{self.symbol}: date {cur.date} does not follow {prev.date}"
                )

    def __len__(self) -> int:
        return len(self.bars)

    def __getitem__(self, item):
        return self.bars[item]

    @property
    def dates(self) -> list[dt.date]:
        return [b.date for b in self.bars]

    def prices(self, mode: DailyPriceMode = DEFAULT_MODE) -> np.ndarray:
        """Vector of canonical daily prices, one per bar."""
        mode = DailyPriceMode.parse(mode)
        return np.array([daily_price(b, mode) for b in self.bars], dtype=float)

    def index_of(self, date: dt.date) -> int:
        """Index of the first bar dated on or after ``date``."""
        for i, b in enumerate(self.bars):
            if b.date >= date:
                return i
        return len(self.bars)


def daily_price(bar: PriceBar, mode: DailyPriceMode = DEFAULT_MODE) -> float:
    if mode is DailyPriceMode.ADJ_CLOSE:
        return bar.adj_close
    if mode is DailyPriceMode.OHLC4:
        return (bar.open + bar.high + bar.low + bar.close) / 4.0
    if mode is DailyPriceMode.HL2:
        return (bar.high + bar.low) / 2.0
    raise ValueError(f"unknown daily price mode {mode!r}")


def _header_map(header: Sequence[str]) -> dict[str, int]:
    found = {h.strip().lower(): i for i, h in enumerate(header)}
    missing = [c for c in COLUMNS if c.lower() not in found]
    if missing:
        raise MalformedHeader(f"missing column(s): {', '.join(missing)}")
    return {c: found[c.lower()] for c in COLUMNS}


def _number(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(text)
    return value


def parse_price_csv(raw: bytes | str, symbol: str) -> PriceSeries:
    """Parse a Yahoo-layout CSV into a validated, date-sorted series.

    Any row with a missing or non-numeric field rejects the whole file;
    rows are never skipped, since gaps would silently shift episode windows.

    Raises
    ------
    MalformedHeader, MalformedRow, NonMonotonicDates, EmptySeries
    """
    text = raw.decode("utf-8-sig") if isinstance(raw, (bytes, bytearray)) else raw
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedHeader("empty input") from None
    cols = _header_map(header)

    bars = []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            date = dt.date.fromisoformat(row[cols["Date"]].strip())
            o, h, lo, c, adj = (
                _number(row[cols[k]])
                for k in ("Open", "High", "Low", "Close", "Adj Close")
            )
            vol_text = row[cols["Volume"]].strip()
            volume = int(float(vol_text))
        except (ValueError, IndexError) as exc:
            raise MalformedRow(line_no, f"unparseable field ({exc})") from None
        bar = PriceBar(date, o, h, lo, c, adj, volume)
        bad = bar.problems()
        if bad:
            raise MalformedRow(line_no, "; ".join(bad))
        bars.append((line_no, bar))

    if not bars:
        raise EmptySeries(f"{symbol}: no data rows")
    bars.sort(key=lambda item: item[1].date)
    for (_, prev), (line_no, cur) in zip(bars, bars[1:]):
        if cur.date == prev.date:
            raise NonMonotonicDates(f"duplicate date {cur.date} (line {line_no})")
    return PriceSeries(symbol, tuple(b for _, b in bars))


def load_price_csv(path, symbol: str | None = None) -> PriceSeries:
    from pathlib import Path

    path = Path(path)
    return parse_price_csv(path.read_bytes(), symbol or path.stem)


def serialize_price_csv(series: PriceSeries) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for b in series.bars:
        writer.writerow(
            [b.date.isoformat(), repr(b.open), repr(b.high), repr(b.low),
             repr(b.close), repr(b.adj_close), b.volume]
        )
    return buf.getvalue()


def slice_range(series: PriceSeries, start: dt.date, end: dt.date) -> PriceSeries:
    """Bars with ``start <= date <= end``; may be empty."""
    if start > end:
        raise InvalidRange(f"start {start} is after end {end}")
    kept = tuple(b for b in series.bars if start <= b.date <= end)
    return PriceSeries(series.symbol, kept)


def from_bars(symbol: str, bars: Iterable[PriceBar]) -> PriceSeries:
    return PriceSeries(symbol, tuple(bars))
