"""Episode sampling, contextual scaling and per-day features.

An episode is a 60-row slice of a price series: the first 30 rows fit a
min-max scaler, the next 30 are the decision days.  Scaling each episode
against its own recent past keeps episodes from different decades on a
comparable footing.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import CountExceedsMaximum, DegenerateContext, SeriesTooShort
from .ingest import DailyPriceMode, PriceSeries

log = logging.getLogger(__name__)

CONTEXT_DAYS = 30
DECISION_DAYS = 30
WINDOW_DAYS = CONTEXT_DAYS + DECISION_DAYS
MA_WINDOWS = (5, 10, 20)
FEATURE_NAMES = (
    "scaled_price",
    "price_change_1d",
    "ma5",
    "ma10",
    "ma20",
    "episode_progress",
)
N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True)
class RawWindow:
    start_index: int
    context_prices: np.ndarray
    decision_prices: np.ndarray
    decision_dates: tuple[dt.date, ...]


@dataclass(frozen=True)
class ContextScaler:
    p_min: float
    p_max: float

    def transform(self, prices) -> np.ndarray:
        prices = np.asarray(prices, dtype=float)
        return (prices - self.p_min) / (self.p_max - self.p_min)


@dataclass(frozen=True, eq=False)
class Episode:
    id: int
    window: RawWindow
    scaled_prices: np.ndarray
    daily_mean_raw: float
    features: np.ndarray  # (DECISION_DAYS, N_FEATURES)

    @property
    def raw_prices(self) -> np.ndarray:
        return self.window.decision_prices

    @property
    def start_date(self) -> dt.date:
        return self.window.decision_dates[0]

    @property
    def end_date(self) -> dt.date:
        return self.window.decision_dates[-1]

    def __len__(self) -> int:
        return len(self.window.decision_prices)

    def to_record(self) -> dict:
        w = self.window
        return {
            "id": self.id,
            "start_date": self.start_date.isoformat(),
            "raw_prices": w.decision_prices.tolist(),
            "scaled_prices": self.scaled_prices.tolist(),
            "features": self.features.tolist(),
            "start_index": w.start_index,
            "context_prices": w.context_prices.tolist(),
            "decision_dates": [d.isoformat() for d in w.decision_dates],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Episode":
        raw = np.asarray(rec["raw_prices"], dtype=float)
        if "decision_dates" in rec:
            dates = tuple(dt.date.fromisoformat(d) for d in rec["decision_dates"])
        else:
            start = dt.date.fromisoformat(rec["start_date"])
            dates = (start,) + (None,) * (len(raw) - 1)
        context = np.asarray(rec.get("context_prices", []), dtype=float)
        window = RawWindow(int(rec.get("start_index", -1)), context, raw, dates)
        return cls(
            id=int(rec["id"]),
            window=window,
            scaled_prices=np.asarray(rec["scaled_prices"], dtype=float),
            daily_mean_raw=float(raw.mean()),
            features=np.asarray(rec["features"], dtype=float),
        )


def max_windows(n_bars: int) -> int:
    return max(0, n_bars - WINDOW_DAYS + 1)


def window_at(series: PriceSeries, start: int, mode: DailyPriceMode, prices=None) -> RawWindow:
    if prices is None:
        prices = series.prices(mode)
    ctx = prices[start : start + CONTEXT_DAYS]
    dec = prices[start + CONTEXT_DAYS : start + WINDOW_DAYS]
    if len(dec) != DECISION_DAYS:
        raise SeriesTooShort(f"window at {start} runs past the end of the series")
    dates = tuple(b.date for b in series.bars[start + CONTEXT_DAYS : start + WINDOW_DAYS])
    return RawWindow(start, ctx.copy(), dec.copy(), dates)


def sample_windows(
    series: PriceSeries,
    mode: DailyPriceMode = DailyPriceMode.OHLC4,
    count: "int | str | None" = "all",
    rng_seed: int = 0,
) -> list[RawWindow]:
    """Draw distinct 60-day windows from ``series``.

    ``count="all"`` (or ``None``) returns every possible window in order.
    An integer count draws that many distinct start offsets uniformly
    without replacement. Windows may overlap but never coincide.
    """
    mode = DailyPriceMode.parse(mode)
    n = len(series)
    if n < WINDOW_DAYS:
        raise SeriesTooShort(f"need at least {WINDOW_DAYS} bars, got {n}")
    limit = max_windows(n)
    if count is None or (isinstance(count, str) and count.lower() == "all"):
        starts = np.arange(limit)
    else:
        count = int(count)
        if count > limit:
            raise CountExceedsMaximum(f"{count} windows requested, only {limit} possible")
        if count < 0:
            raise ValueError("count must be non-negative")
        rng = np.random.default_rng(rng_seed)
        starts = rng.choice(limit, size=count, replace=False)
    prices = series.prices(mode)
    return [window_at(series, int(s), mode, prices) for s in starts]


def fit_scaler(context_prices) -> ContextScaler:
    ctx = np.asarray(context_prices, dtype=float)
    lo, hi = float(ctx.min()), float(ctx.max())
    if hi - lo < 1e-12 * hi:
        raise DegenerateContext(f"constant context window (min {lo}, max {hi})")
    return ContextScaler(lo, hi)


def feature_table(scaled_context: np.ndarray, scaled_decision: np.ndarray,
                  horizon: int | None = None) -> np.ndarray:
    """Per-day features for the decision days.

    Moving averages at early decision days reach back into the context so
    every window is full. Each row depends only on prices up to that day,
    so a partial window (``horizon`` longer than the prices given) yields
    the leading rows of the full table.
    """
    full = np.concatenate([scaled_context, scaled_decision])
    c = len(scaled_context)
    n = len(scaled_decision)
    if c < max(MA_WINDOWS):
        raise ValueError(f"context of {c} days is shorter than the widest moving average")
    cums = np.concatenate([[0.0], np.cumsum(full)])
    idx = np.arange(c, c + n)
    out = np.empty((n, N_FEATURES))
    out[:, 0] = full[idx]
    out[:, 1] = full[idx] - full[idx - 1]
    for j, w in enumerate(MA_WINDOWS, start=2):
        out[:, j] = (cums[idx + 1] - cums[idx + 1 - w]) / w
    out[:, 5] = np.arange(1, n + 1) / (horizon or n)
    return out


def build_episode(window: RawWindow, id: int) -> Episode:
    scaler = fit_scaler(window.context_prices)
    scaled_ctx = scaler.transform(window.context_prices)
    scaled = scaler.transform(window.decision_prices)
    return Episode(
        id=id,
        window=window,
        scaled_prices=scaled,
        daily_mean_raw=float(np.mean(window.decision_prices)),
        features=feature_table(scaled_ctx, scaled),
    )


def build_episodes(windows: Iterable[RawWindow]) -> list[Episode]:
    """Build episodes for every window, skipping constant contexts with a warning."""
    out = []
    for i, w in enumerate(windows):
        try:
            out.append(build_episode(w, i))
        except DegenerateContext as exc:
            log.warning("skipping window at offset %d: %s", w.start_index, exc)
    return out


def write_episodes(episodes: Sequence[Episode], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ep in episodes:
            fh.write(json.dumps(ep.to_record()) + "\n")


def read_episodes(path) -> list[Episode]:
    with open(path, encoding="utf-8") as fh:
        return [Episode.from_record(json.loads(line)) for line in fh if line.strip()]
