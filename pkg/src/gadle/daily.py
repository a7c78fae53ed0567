"""Offline emulation of a once-a-day decision loop.

A JSON state file carries the observed prices and an append-only ledger of
decisions. Each call consumes one new bar, builds that day's feature row
exactly as the batch path would, and records BUY_TWICE or HOLD with the
model probability. Every 30 decisions the window closes, its result is
recorded, and the finished window becomes the next one's scaling context.

Decision rule: buy twice when the probability is at least 0.5, the same
threshold the batch rollout uses. Features use only the bar being decided
and earlier bars.
"""

from __future__ import annotations

import datetime as dt
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .episodes import CONTEXT_DAYS, DECISION_DAYS, feature_table, fit_scaler
from .errors import MissingModel, SeriesTooShort, StaleState
from .evaluate import WindowResult
from .ingest import DEFAULT_MODE, DailyPriceMode, PriceBar, PriceSeries, daily_price
from .neural import Mlp, forward, load_model

STATE_VERSION = 1
BUY_TWICE = "BUY_TWICE"
HOLD = "HOLD"


@dataclass
class DailyRecord:
    date: str
    price: float
    window: int
    day: int  # 1-based position inside the window
    features: list  # six price features followed by the buy ratio
    probability: float
    decision: str
    cumulative_purchases: int  # units bought since the state was created

    @property
    def bought(self) -> bool:
        return self.decision == BUY_TWICE


@dataclass
class DailyRunState:
    symbol: str
    price_mode: str
    dates: list[str]
    prices: list[float]
    window_start: int  # index into ``prices`` of the current window's first day
    records: list[DailyRecord] = field(default_factory=list)
    windows: list[dict] = field(default_factory=list)

    @property
    def mode(self) -> DailyPriceMode:
        return DailyPriceMode.parse(self.price_mode)

    @property
    def last_date(self) -> dt.date:
        return dt.date.fromisoformat(self.dates[-1])

    @property
    def window_index(self) -> int:
        return len(self.windows)

    def current_window(self) -> list[DailyRecord]:
        return [r for r in self.records if r.window == self.window_index]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = STATE_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DailyRunState":
        d = dict(d)
        d.pop("schema_version", None)
        d["records"] = [DailyRecord(**r) for r in d.get("records", [])]
        return cls(**d)

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "DailyRunState":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def init_daily_state(series: PriceSeries, mode=DEFAULT_MODE, through: dt.date | None = None) -> DailyRunState:
    """Seed a state with the last 30 bars on or before ``through`` as context."""
    mode = DailyPriceMode.parse(mode)
    bars = [b for b in series.bars if through is None or b.date <= through]
    if len(bars) < CONTEXT_DAYS:
        raise SeriesTooShort(f"need {CONTEXT_DAYS} bars of history, got {len(bars)}")
    ctx = bars[-CONTEXT_DAYS:]
    return DailyRunState(
        symbol=series.symbol,
        price_mode=mode.value,
        dates=[b.date.isoformat() for b in ctx],
        prices=[daily_price(b, mode) for b in ctx],
        window_start=CONTEXT_DAYS,
    )


def feature_row(state: DailyRunState) -> np.ndarray:
    """Inputs for the newest price in ``state``: features plus buy ratio."""
    ws = state.window_start
    prices = np.asarray(state.prices, dtype=float)
    ctx = prices[ws - CONTEXT_DAYS : ws]
    dec = prices[ws:]
    scaler = fit_scaler(ctx)
    feats = feature_table(scaler.transform(ctx), scaler.transform(dec), horizon=DECISION_DAYS)[-1]
    earlier = state.current_window()
    ratio = sum(r.bought for r in earlier) / len(earlier) if earlier else 0.0
    return np.append(feats, ratio)


def advance(state: DailyRunState, policy: Mlp, bar: PriceBar,
            threshold: float = 0.5) -> tuple[DailyRecord, WindowResult | None]:
    """Decide for ``bar`` and append to ``state`` in place.

    Returns the new record and, when this bar closes a window, that
    window's result.
    """
    if bar.date <= state.last_date:
        raise StaleState(f"{bar.date} is not after the last recorded date {state.last_date}")
    price = daily_price(bar, state.mode)
    state.dates.append(bar.date.isoformat())
    state.prices.append(price)
    x = feature_row(state)
    prob = float(forward(policy, x[None, :])[0])
    buy = prob >= threshold
    units = state.records[-1].cumulative_purchases if state.records else 0
    rec = DailyRecord(
        date=bar.date.isoformat(),
        price=price,
        window=state.window_index,
        day=len(state.prices) - state.window_start,
        features=x.tolist(),
        probability=prob,
        decision=BUY_TWICE if buy else HOLD,
        cumulative_purchases=units + (2 if buy else 0),
    )
    state.records.append(rec)
    closed = None
    if rec.day == DECISION_DAYS:
        rows = state.current_window()
        genes = [int(r.bought) for r in rows]
        closed = WindowResult.from_prices([r.price for r in rows], genes, f"{rows[0].date} - {rows[-1].date}")
        state.windows.append(closed.to_dict())
        state.window_start = len(state.prices)
    return rec, closed


def daily_run(state_file, model_path, today_bar: PriceBar,
              threshold: float = 0.5) -> tuple[DailyRecord, WindowResult | None]:
    """Load the state file and model, decide for ``today_bar``, save the state."""
    if not Path(model_path).is_file():
        raise MissingModel(f"no trained model at {model_path}")
    policy = load_model(model_path)
    state = DailyRunState.load(state_file)
    out = advance(state, policy, today_bar, threshold)
    state.save(state_file)
    return out
