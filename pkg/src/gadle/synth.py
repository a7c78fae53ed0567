"""Seeded synthetic daily bars (geometric random walk) in the Yahoo layout.

Used when real market data is not at hand. Defaults loosely resemble a
broad US equity index: about 7% annual drift and 1.2% daily volatility.
"""

from __future__ import annotations

import datetime as dt

import numpy as np

from .ingest import PriceBar, PriceSeries


def business_days(start: dt.date, count: int) -> list[dt.date]:
    days = np.busday_offset(np.datetime64(start, "D"), np.arange(count), roll="forward")
    return [d.item() for d in days]


def business_days_between(start: dt.date, end: dt.date) -> list[dt.date]:
    n = int(np.busday_count(np.datetime64(start, "D"), np.datetime64(end, "D") + 1))
    return business_days(start, n)


def geometric_walk(
    n_days: int | None = None,
    seed: int = 0,
    start: dt.date = dt.date(2000, 1, 3),
    end: dt.date | None = None,
    initial_price: float = 50.0,
    annual_drift: float = 0.07,
    daily_volatility: float = 0.012,
    symbol: str = "SYN",
) -> PriceSeries:
    """Daily OHLC bars following a geometric random walk.

    Give either ``n_days`` or ``end``. Opens gap from the previous close by
    a fraction of the daily volatility; highs and lows extend beyond the
    open/close envelope by a half-normal amount.
    """
    if end is not None:
        dates = business_days_between(start, end)
    elif n_days is not None:
        dates = business_days(start, n_days)
    else:
        raise ValueError("give n_days or end")
    n = len(dates)
    rng = np.random.default_rng(seed)
    mu = annual_drift / 252.0 - 0.5 * daily_volatility**2
    log_ret = mu + daily_volatility * rng.standard_normal(n)
    close = initial_price * np.exp(np.cumsum(log_ret))
    prev_close = np.concatenate([[initial_price], close[:-1]])
    opens = prev_close * np.exp(0.3 * daily_volatility * rng.standard_normal(n))
    top = np.maximum(opens, close)
    bottom = np.minimum(opens, close)
    high = top * (1.0 + 0.4 * daily_volatility * np.abs(rng.standard_normal(n)))
    low = bottom * (1.0 - 0.4 * daily_volatility * np.abs(rng.standard_normal(n)))
    volume = rng.integers(1_000_000, 5_000_000, size=n)
    bars = tuple(
        PriceBar(
            d,
            round(float(o), 6),
            round(float(h), 6),
            round(float(lo), 6),
            round(float(c), 6),
            round(float(c), 6),
            int(v),
        )
        for d, o, h, lo, c, v in zip(dates, opens, high, low, close, volume)
    )
    # rounding can push open/close a hair outside [low, high]
    fixed = []
    for b in bars:
        lo = min(b.low, b.open, b.close)
        hi = max(b.high, b.open, b.close)
        fixed.append(PriceBar(b.date, b.open, hi, lo, b.close, b.adj_close, b.volume))
    return PriceSeries(symbol, tuple(fixed))


def sample_csv_path():
    """Path to the bundled 200-bar synthetic sample (2000-01-03 .. 2000-10-06)."""
    from importlib.resources import files

    return files("gadle").joinpath("data", "sample_200.csv")
