from __future__ import annotations

import datetime as dt
from pathlib import Path

import numpy as np
import pytest

from gadle.episodes import DECISION_DAYS, Episode, RawWindow, build_episode
from gadle.ingest import load_price_csv
from gadle.synth import geometric_walk, sample_csv_path

DATA = Path(__file__).parent / "data"


def make_episode(decision, context=None, id=0) -> Episode:
    """Episode from explicit raw prices; the context defaults to a gentle ramp."""
    decision = np.asarray(decision, dtype=float)
    if context is None:
        context = np.linspace(decision.mean() * 0.95, decision.mean() * 1.05, 30)
    dates = tuple(dt.date(2001, 1, 1) + dt.timedelta(days=i) for i in range(len(decision)))
    return build_episode(RawWindow(0, np.asarray(context, dtype=float), decision, dates), id)


def random_episodes(n, seed=0, length=DECISION_DAYS) -> list[Episode]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        steps = rng.normal(0, 0.012, 30 + length)
        path = 100 * np.exp(np.cumsum(steps))
        out.append(make_episode(path[30:], path[:30], i))
    return out


@pytest.fixture(scope="session")
def sample_series():
    return load_price_csv(sample_csv_path(), "SAMPLE")


@pytest.fixture(scope="session")
def twenty_years():
    """Synthetic stand-in for 2000-2020 daily bars."""
    return geometric_walk(seed=2020, start=dt.date(2000, 1, 3), end=dt.date(2020, 12, 31), symbol="SYN")


@pytest.fixture
def tiny_ini(tmp_path):
    """Config text for a seconds-long run on the bundled 200-bar sample."""
    text = f"""
[data]
path = {sample_csv_path()}
train_start = 2000-01-01
train_end = 2000-06-30
backtest_start = 2000-06-01
backtest_end = 2000-12-31

[sampler]
episodes = 50

[fit]
epochs = 20
test_size = 0.2

[dqn]
episodes = 12

[a2c]
episodes = 12
"""
    path = tmp_path / "tiny.ini"
    path.write_text(text, encoding="utf-8")
    return path
