from __future__ import annotations

import csv
import datetime as dt
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gadle.errors import RangeTooShort
from gadle.evaluate import (
    BacktestReport,
    Perturbation,
    RunOutcome,
    WindowResult,
    aggregate,
    backtest,
    backtest_windows,
    consistency_run,
    scale_perturbations,
    sensitivity_run,
    throughput_report,
    write_histogram,
)
from gadle.ingest import DailyPriceMode, slice_range
from gadle.metrics import agent_average, pcod, rod
from gadle.rl import TrainingCurves
from gadle.synth import geometric_walk

# (agent average, daily average, agent units) per 30-day window of the
# reference 2020 back-test of the distilled policy
DISTILLED_2020_ROWS = [
    (160.86, 161.98, 30), (129.77, 139.38, 38), (137.74, 135.13, 2), (146.47, 149.88, 34),
    (154.56, 157.93, 26), (167.44, 169.10, 42), (168.30, 169.61, 44), (172.05, 180.83, 14),
]
# the same layout for the reference DQN baseline table
DQN_TABLE = [
    (163.43, 161.98, 30), (125.49, 139.38, 34), (136.27, 135.13, 36), (146.05, 149.88, 18),
    (160.67, 157.93, 30), (170.18, 169.10, 40), (170.98, 169.61, 2), (182.50, 180.83, 50),
]


def rows(table):
    return [WindowResult.from_figures(f"w{i}", a, d, n) for i, (a, d, n) in enumerate(table)]


def test_distilled_overall_row_closes():
    o = aggregate(rows(DISTILLED_2020_ROWS))
    assert round(o.agent_avg_price, 2) == 155.99
    assert round(o.daily_avg_price, 2) == 157.98
    assert round(o.rod, 2) == 1.26
    assert (o.agent_purchases, o.daily_purchases, o.pcod) == (230, 240, -10)


def test_dqn_table_overall_row_closes():
    o = aggregate(rows(DQN_TABLE))
    assert (round(o.agent_avg_price, 2), round(o.daily_avg_price, 2), round(o.rod, 2)) == (157.49, 157.98, 0.31)
    assert o.pcod == 0


def test_rod_examples():
    assert round((1 - 155.99 / 157.98) * 100, 2) == 1.26
    p = np.random.default_rng(0).uniform(50, 60, 30)
    assert rod(p, np.ones(30)) == pytest.approx(0.0, abs=1e-12)
    assert rod(np.full(30, 5.0), np.random.default_rng(1).integers(0, 2, 30)) == pytest.approx(0.0, abs=1e-12)
    assert rod(p, np.zeros(30)) == 0.0 and math.isnan(agent_average(p, np.zeros(30)))


def test_pcod_examples():
    g = np.zeros(30, int)
    assert pcod(g) == -30
    g[:15] = 1
    assert pcod(g) == 0
    g[:19] = 1
    assert pcod(g) == 8


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**20), k=st.floats(0.01, 100.0))
def test_rod_sign_law_and_scale_invariance(seed, k):
    rng = np.random.default_rng(seed)
    p = rng.uniform(10, 20, 30)
    g = rng.integers(0, 2, 30)
    w = WindowResult.from_prices(p, g)
    if g.sum():
        assert (w.agent_avg_price < w.daily_avg_price) == (w.rod > 0) or abs(w.rod) < 1e-12
        assert w.rod == pytest.approx((1 - w.agent_avg_price / w.daily_avg_price) * 100, abs=1e-9)
    assert rod(k * p, g) == pytest.approx(rod(p, g), abs=1e-9)
    assert pcod(g) == w.agent_purchases - 30


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**20), n=st.integers(1, 12))
def test_aggregate_recomputes_from_windows(seed, n):
    rng = np.random.default_rng(seed)
    ws = [WindowResult.from_prices(rng.uniform(10, 20, 30), rng.integers(0, 2, 30)) for _ in range(n)]
    o = aggregate(ws)
    units = sum(w.agent_purchases for w in ws)
    if units:
        weighted = sum(w.agent_avg_price * w.agent_purchases for w in ws if w.agent_purchases) / units
        assert o.agent_avg_price == pytest.approx(weighted, rel=1e-12)
    assert o.daily_avg_price == pytest.approx(np.mean([w.daily_avg_price for w in ws]), rel=1e-12)
    assert o.pcod == units - 30 * n


# -- back-test -------------------------------------------------------------------


@pytest.fixture(scope="module")
def two_years():
    return geometric_walk(seed=12, start=dt.date(2019, 1, 1), end=dt.date(2020, 12, 31))


def test_always_buy_backtest(two_years):
    rep = backtest(lambda ep: np.ones(len(ep), int), two_years, dt.date(2020, 1, 1), dt.date(2020, 12, 31))
    assert len(rep.windows) == len(slice_range(two_years, dt.date(2020, 1, 1), dt.date(2020, 12, 31))) // 30
    for w in rep.windows:
        assert w.rod == pytest.approx(0.0, abs=1e-9) and w.pcod == 30


def test_windows_are_consecutive_with_preceding_context(two_years):
    eps = backtest_windows(two_years, dt.date(2020, 1, 1), dt.date(2020, 12, 31))
    prices = two_years.prices(DailyPriceMode.OHLC4)
    first = two_years.index_of(dt.date(2020, 1, 1))
    for k, ep in enumerate(eps):
        start = first + 30 * k
        assert ep.start_date == two_years.dates[start]
        np.testing.assert_array_equal(ep.raw_prices, prices[start : start + 30])
        np.testing.assert_array_equal(ep.window.context_prices, prices[start - 30 : start])
    assert eps[-1].end_date <= dt.date(2020, 12, 31)


def test_range_without_history_uses_first_bars_as_context():
    s = geometric_walk(95, seed=1)
    eps = backtest_windows(s, s.dates[0], s.dates[-1])
    assert len(eps) == 2 and eps[0].start_date == s.dates[30]


def test_short_range_rejected():
    s = geometric_walk(59, seed=2)
    with pytest.raises(RangeTooShort):
        backtest_windows(s, s.dates[0], s.dates[-1])


def test_report_serialisation(two_years):
    rng = np.random.default_rng(0)
    rep = backtest(lambda ep: rng.integers(0, 2, len(ep)), two_years, dt.date(2020, 1, 1), dt.date(2020, 12, 31),
                   config={"seed": 1})
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["schema_version"] == 1 and d["kind"] == "backtest" and d["config"] == {"seed": 1}
    again = BacktestReport.from_dict(d)
    assert again.overall == rep.overall and again.windows == rep.windows
    text = rep.to_text()
    assert "Overall" in text and len(text.splitlines()) == len(rep.windows) + 5


# -- harnesses ---------------------------------------------------------------------


def constant_outcome(rod_value, units=30, curves=None):
    w = WindowResult.from_figures("w", 100 * (1 - rod_value / 100), 100.0, units)
    return RunOutcome(BacktestReport.from_windows([w]), curves)


def test_deterministic_method_has_zero_spread():
    rep = consistency_run(lambda seed: constant_outcome(1.0), n_seeds=5, method="CONST")
    assert rep.std_rod == 0.0 and rep.std_pcod == 0.0 and rep.fail_percent == 0.0
    assert rep.mean_rod == pytest.approx(1.0)
    assert json.loads(json.dumps(rep.to_dict()))["runs"][0]["seed"] == 0
    with pytest.raises(ValueError):
        consistency_run(lambda seed: constant_outcome(1.0), n_seeds=1)


def test_failed_runs_are_counted_and_excluded():
    never = TrainingCurves()
    for _ in range(20):
        never.record(-1.0, 0.0)

    def run(seed):
        return constant_outcome(5.0, curves=never) if seed % 4 == 0 else constant_outcome(1.0)

    rep = consistency_run(run, n_seeds=8)
    assert rep.fail_percent == 25.0
    assert rep.mean_rod == pytest.approx(1.0)
    assert "buy ratio" in rep.reasons[0]


def test_perturbation_scaling_and_clamping():
    ps = scale_perturbations({"pop": 100, "p": 0.9}, ["pop", "p"], 0.2, {"p": (0.0, 1.0)})
    by = {p.label: p for p in ps}
    assert by["pop dec"].overrides == {"pop": 80} and by["pop inc"].overrides == {"pop": 120}
    assert by["p dec"].overrides["p"] == pytest.approx(0.72)
    assert by["p inc"].overrides == {"p": 1.0} and "clamped" in by["p inc"].note


def test_zero_magnitude_sensitivity_has_no_deviation():
    ps = scale_perturbations({"a": 3.0, "b": 7}, ["a", "b"], 0.0)

    def run(overrides):
        return constant_outcome(1.5, units=28)

    rep = sensitivity_run(run, ps)
    assert all(v == 0.0 for v in rep.deviation().values())
    assert rep.n_failed == 0 and "Avg. absolute deviation" in rep.to_text()


def test_sensitivity_deviation_skips_failed_rows():
    fail = TrainingCurves()
    for _ in range(8):
        fail.record(-1.0, 1.0)
    outcomes = {"Baseline": constant_outcome(1.0), "x": constant_outcome(2.0), "y": constant_outcome(9.0, curves=fail)}
    ps = [Perturbation("x", {"k": 1}), Perturbation("y", {"k": 2})]
    rep = sensitivity_run(lambda o: outcomes["x" if o == {"k": 1} else "y" if o else "Baseline"], ps)
    assert rep.n_failed == 1
    assert rep.deviation()["rod"] == pytest.approx(1.0)
    assert json.loads(json.dumps(rep.to_dict()))["failed"] == "1 / 2"


def test_throughput_examples():
    t = throughput_report(4245, 33 * 60, "16 cores")
    assert round(t["episodes_per_hour"]) == 7718
    assert t["episodes_per_hour"] == pytest.approx(4245 / (33 / 60), rel=1e-12)
    assert throughput_report(60, 3600)["episodes_per_hour"] == 60
    assert t["total_time"] == "33 min"


def test_histogram_csv(tmp_path):
    write_histogram([15, 15, 14, 16, 15], tmp_path / "h.csv")
    with open(tmp_path / "h.csv", newline="") as fh:
        assert list(csv.reader(fh)) == [["value", "count"], ["14", "1"], ["15", "3"], ["16", "1"]]
    write_histogram([0.1, 0.4, 0.6], tmp_path / "r.csv", bin_width=0.5)
    with open(tmp_path / "r.csv", newline="") as fh:
        assert list(csv.reader(fh))[1:] == [["0.0", "2"], ["0.5", "1"]]
