from __future__ import annotations

import datetime as dt
import json
import math

import numpy as np
import pytest

from gadle.daily import BUY_TWICE, HOLD, DailyRunState, advance, daily_run, init_daily_state
from gadle.episodes import build_episode, window_at
from gadle.errors import MissingModel, SeriesTooShort, StaleState
from gadle.evaluate import backtest
from gadle.ingest import DailyPriceMode
from gadle.neural import make_policy, predict_actions, save_model
from gadle.pipeline import policy_fn

START = 40  # window offset inside the bundled sample


def constant_policy(prob):
    net = make_policy((4, 3), seed=0)
    for p in net.params():
        p[...] = 0.0
    net.biases[-1][...] = math.log(prob / (1 - prob))
    return net


def fresh_state(series, start=START):
    return init_daily_state(series, DailyPriceMode.OHLC4, through=series.dates[start + 29])


def test_high_probability_buys_twice(sample_series):
    state = fresh_state(sample_series)
    rec, closed = advance(state, constant_policy(0.73), sample_series.bars[START + 30])
    assert rec.decision == BUY_TWICE and rec.probability == pytest.approx(0.73)
    assert rec.cumulative_purchases == 2 and closed is None
    rec, _ = advance(state, constant_policy(0.2), sample_series.bars[START + 31])
    assert rec.decision == HOLD and rec.cumulative_purchases == 2
    assert rec.features[-1] == 1.0  # one buy out of one earlier day


def test_duplicate_date_is_stale(sample_series):
    state = fresh_state(sample_series)
    bar = sample_series.bars[START + 30]
    advance(state, constant_policy(0.6), bar)
    with pytest.raises(StaleState):
        advance(state, constant_policy(0.6), bar)
    with pytest.raises(StaleState):
        advance(state, constant_policy(0.6), sample_series.bars[START + 10])


def test_short_history(sample_series):
    with pytest.raises(SeriesTooShort):
        init_daily_state(sample_series, through=sample_series.dates[10])


def test_missing_model(tmp_path, sample_series):
    fresh_state(sample_series).save(tmp_path / "s.json")
    with pytest.raises(MissingModel):
        daily_run(tmp_path / "s.json", tmp_path / "none.json", sample_series.bars[START + 30])


def test_thirty_calls_match_batch_paths(tmp_path, sample_series):
    policy = make_policy(seed=11)
    save_model(policy, tmp_path / "m.json")
    fresh_state(sample_series).save(tmp_path / "s.json")
    closed = None
    for k in range(30):
        rec, closed = daily_run(tmp_path / "s.json", tmp_path / "m.json", sample_series.bars[START + 30 + k])
        assert (closed is None) == (k < 29)
    state = DailyRunState.load(tmp_path / "s.json")
    genes = [int(r.decision == BUY_TWICE) for r in state.records]

    episode = build_episode(window_at(sample_series, START, DailyPriceMode.OHLC4), 0)
    assert genes == predict_actions(policy, episode).tolist()
    np.testing.assert_allclose([r.features[:6] for r in state.records], episode.features, atol=1e-12)

    rep = backtest(policy_fn(policy), sample_series, sample_series.dates[START + 30], sample_series.dates[START + 59])
    assert len(rep.windows) == 1
    w = rep.windows[0]
    assert (closed.agent_purchases, closed.daily_purchases) == (w.agent_purchases, w.daily_purchases)
    assert closed.rod == pytest.approx(w.rod, abs=1e-12)
    assert closed.daily_avg_price == pytest.approx(w.daily_avg_price, rel=1e-12)
    assert state.window_index == 1 and state.window_start == len(state.prices)


def test_window_roll_uses_finished_window_as_context(sample_series):
    state = fresh_state(sample_series)
    policy = make_policy(seed=2)
    for k in range(31):
        rec, _ = advance(state, policy, sample_series.bars[START + 30 + k])
    assert rec.window == 1 and rec.day == 1
    episode = build_episode(window_at(sample_series, START + 30, DailyPriceMode.OHLC4), 0)
    np.testing.assert_allclose(rec.features[:6], episode.features[0], atol=1e-12)
    assert rec.features[-1] == 0.0


def test_ledger_is_append_only_with_increasing_dates(tmp_path, sample_series):
    policy = make_policy(seed=5)
    save_model(policy, tmp_path / "m.json")
    fresh_state(sample_series).save(tmp_path / "s.json")
    seen = []
    for k in range(12):
        daily_run(tmp_path / "s.json", tmp_path / "m.json", sample_series.bars[START + 30 + k])
        records = json.loads((tmp_path / "s.json").read_text())["records"]
        assert records[: len(seen)] == seen
        seen = records
    dates = [dt.date.fromisoformat(r["date"]) for r in seen]
    assert all(a < b for a, b in zip(dates, dates[1:]))
    assert not (tmp_path / "s.json.tmp").exists()
