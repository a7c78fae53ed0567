from __future__ import annotations

import json
import math

import pytest

from gadle.config import load_config
from gadle.evaluate import BacktestReport
from gadle.pipeline import perturbations_for, run_consistency, run_pipeline

ARTIFACTS = {
    "run_config.ini", "episodes.jsonl", "solved.jsonl", "model.json", "training.csv", "backtest.json",
    "backtest.txt", "holdout.json", "throughput.json", "optimal_purchase_counts_hist.csv", "optimal_rod_hist.csv",
}


@pytest.fixture
def tiny(tiny_ini):
    return load_config(tiny_ini)


def test_tiny_run_writes_every_artifact(tiny, tmp_path):
    res = run_pipeline(tiny, tmp_path)
    names = {p.name for p in tmp_path.iterdir()}
    assert ARTIFACTS <= names
    report = json.loads((tmp_path / "backtest.json").read_text())
    assert report["schema_version"] == 1 and report["kind"] == "backtest"
    assert set(report) >= {"windows", "overall", "config"}
    for w in report["windows"]:
        assert set(w) >= {"label", "agent_avg_price", "daily_avg_price", "rod", "agent_purchases", "pcod"}
    assert BacktestReport.from_dict(report).overall == res.report.overall
    assert report["config"] == tiny.echo()
    assert json.loads((tmp_path / "model.json").read_text())["config"] == tiny.echo()
    assert json.loads((tmp_path / "holdout.json").read_text())["test_episodes"] == len(res.dataset.split.test) == 10
    lines = (tmp_path / "solved.jsonl").read_text().splitlines()
    assert len(lines) == 51  # 50 records plus the summary


def test_runs_are_byte_identical_across_parallelism(tiny, tmp_path):
    run_pipeline(tiny, tmp_path / "a")
    run_pipeline(tiny.with_section("run", parallelism=2), tmp_path / "b")
    for name in ("solved.jsonl", "model.json", "episodes.jsonl", "backtest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_echoed_config_reproduces_the_run(tiny, tmp_path):
    run_pipeline(tiny, tmp_path / "a")
    again = load_config(tmp_path / "a" / "run_config.ini")
    run_pipeline(again, tmp_path / "b")
    assert (tmp_path / "a" / "model.json").read_bytes() == (tmp_path / "b" / "model.json").read_bytes()


def test_seed_changes_the_solution(tiny, tmp_path):
    run_pipeline(tiny, tmp_path / "a")
    run_pipeline(tiny.with_seed(1), tmp_path / "b")
    assert (tmp_path / "a" / "episodes.jsonl").read_bytes() != (tmp_path / "b" / "episodes.jsonl").read_bytes()


def test_consistency_on_tiny_profile(tiny):
    rep = run_consistency(tiny.with_section("sampler", episodes=20).with_section("fit", epochs=5), n_seeds=2)
    assert rep.seeds == [0, 1] and rep.fail_percent == 0.0 and math.isfinite(rep.mean_rod)


def test_gadle_perturbation_rows(tiny):
    labels = [p.label for p in perturbations_for(tiny, "gadle")]
    assert len(labels) == 10 and len(set(labels)) == 10
