"""End-to-end runs: sample, solve, distil, back-test; plus the RL baselines.

Every stage takes the effective :class:`RunConfig` and derives all of its
randomness from ``config.run.seed``. Artifacts that are meant to be
compared across runs (solved set, model) embed the config echo and no
wall-clock figures.
"""

from __future__ import annotations

import functools
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .episodes import Episode, build_episodes, sample_windows, write_episodes
from .errors import ConfigError
from .evaluate import (
    BacktestReport,
    ConsistencyReport,
    Perturbation,
    RunOutcome,
    SensitivityReport,
    WindowResult,
    backtest,
    consistency_run,
    hardware_note,
    scale_perturbations,
    sensitivity_run,
    throughput_report,
    write_histogram,
    write_json,
)
from .gasolver import SolvedEpisodeSet, solve_all
from .ingest import PriceSeries, load_price_csv, slice_range
from .neural import (
    Dataset,
    FitResult,
    Mlp,
    episodes_to_dataset,
    evaluate_rows,
    fit,
    make_policy,
    predict_actions,
    predict_many,
    save_model,
    write_history,
)
from .rl import Agent, rollout, train_a2c, train_dqn

log = logging.getLogger(__name__)

METHODS = ("gadle", "dqn", "a2c")


def load_series(config: RunConfig) -> PriceSeries:
    if not config.data.path:
        raise ConfigError("no data file configured; set [data] path")
    return load_price_csv(config.data.path, config.data.symbol or None)


def training_episodes(config: RunConfig, series: PriceSeries) -> list[Episode]:
    d = config.data
    train = slice_range(series, d.train_start, d.train_end)
    windows = sample_windows(train, d.price_mode, config.sampler.episodes, rng_seed=config.seed)
    return build_episodes(windows)


def solve(config: RunConfig, episodes: Sequence[Episode]) -> SolvedEpisodeSet:
    return solve_all(episodes, config.ga, master_seed=config.seed, parallelism=config.run.parallelism)


def train_policy(config: RunConfig, solved, episodes: Sequence[Episode]) -> tuple[FitResult, Dataset]:
    data = episodes_to_dataset(
        solved, episodes, split_seed=config.seed,
        test_size=config.fit.test_size, validation_fraction=config.fit.validation_fraction,
    )
    fc = config.fit.fit_config(config.seed)
    result = fit(make_policy(fc.hidden, seed=fc.init_seed), data, fc)
    return result, data


def backtest_policy(config: RunConfig, series: PriceSeries, policy_fn) -> BacktestReport:
    d = config.data
    return backtest(policy_fn, series, d.backtest_start, d.backtest_end, d.price_mode, config.echo())


def policy_fn(policy: Mlp):
    return functools.partial(predict_actions, policy)


def agent_fn(agent: Agent):
    return functools.partial(rollout, agent)


def model_extra(config: RunConfig, fit_result: FitResult | None = None) -> dict:
    extra = {"config": config.echo()}
    if fit_result is not None:
        extra["best_epoch"] = fit_result.best_epoch
    return extra


@dataclass
class PipelineResult:
    episodes: list[Episode]
    solved: SolvedEpisodeSet
    fit: FitResult
    dataset: Dataset
    report: BacktestReport
    throughput: dict
    holdout: dict
    paths: dict = field(default_factory=dict)


def holdout_summary(policy: Mlp, dataset: Dataset, episodes: Sequence[Episode], solved) -> dict:
    """Teacher-forced accuracy plus the policy's own rollouts on the test episodes."""
    loss, acc = evaluate_rows(policy, dataset.test)
    by_id = {ep.id: ep for ep in episodes}
    sol = {s.episode_id: s for s in solved}
    test_eps = [by_id[i] for i in dataset.split.test]
    out = {"test_episodes": len(test_eps), "test_loss": loss, "test_accuracy": acc}
    if test_eps:
        genes = predict_many(policy, test_eps)
        rows = [WindowResult.from_prices(ep.raw_prices, g) for ep, g in zip(test_eps, genes)]
        out["policy_mean_purchase_count"] = float(genes.sum(axis=1).mean())
        out["optimal_mean_purchase_count"] = float(np.mean([sol[ep.id].purchase_count for ep in test_eps]))
        out["policy_mean_rod"] = float(np.mean([r.rod for r in rows]))
        out["optimal_mean_rod"] = float(np.mean([sol[ep.id].return_over_daily for ep in test_eps]))
        out["_policy_counts"] = genes.sum(axis=1).tolist()
        out["_policy_rods"] = [r.rod for r in rows]
    return out


def run_pipeline(config: RunConfig, out_dir=None, write: bool = True) -> PipelineResult:
    """Sample, solve, build the dataset, fit the policy and back-test it.

    With ``write`` set, artifacts land in ``out_dir`` (default
    ``config.run.output_dir``)::

        run_config.ini      effective configuration
        episodes.jsonl      sampled training episodes
        solved.jsonl        GA solutions + summary (no timing)
        model.json          policy weights + config echo
        training.csv        per-epoch loss/accuracy
        backtest.json/.txt  rolling-window report
        holdout.json        test-split accuracy and rollout summary
        throughput.json     wall-clock figures
        *_hist.csv          value,count density data
    """
    t0 = time.perf_counter()
    series = load_series(config)
    episodes = training_episodes(config, series)
    log.info("sampled %d episodes", len(episodes))
    solved = solve(config, episodes)
    log.info("solved %d episodes in %.1f s", len(solved), solved.wall_seconds)
    fit_result, dataset = train_policy(config, solved, episodes)
    policy = fit_result.policy
    report = backtest_policy(config, series, policy_fn(policy))
    holdout = holdout_summary(policy, dataset, episodes, solved)
    total = time.perf_counter() - t0
    throughput = throughput_report(len(solved), solved.wall_seconds, hardware_note())
    throughput["pipeline_seconds"] = total
    result = PipelineResult(episodes, solved, fit_result, dataset, report, throughput, holdout)
    if write:
        result.paths = write_pipeline_artifacts(config, result, out_dir)
    return result


def write_pipeline_artifacts(config: RunConfig, result: PipelineResult, out_dir=None) -> dict:
    out = Path(out_dir or config.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / v for k, v in {
        "config": "run_config.ini",
        "episodes": "episodes.jsonl",
        "solved": "solved.jsonl",
        "model": "model.json",
        "training": "training.csv",
        "backtest_json": "backtest.json",
        "backtest_text": "backtest.txt",
        "holdout": "holdout.json",
        "throughput": "throughput.json",
        "optimal_counts": "optimal_purchase_counts_hist.csv",
        "optimal_rod": "optimal_rod_hist.csv",
    }.items()}
    paths["config"].write_text(config.to_ini(), encoding="utf-8")
    write_episodes(result.episodes, paths["episodes"])
    result.solved.write(paths["solved"])
    save_model(result.fit.policy, paths["model"], model_extra(config, result.fit))
    write_history(result.fit.history, paths["training"])
    write_json(result.report.to_dict(), paths["backtest_json"])
    paths["backtest_text"].write_text(result.report.to_text(), encoding="utf-8")
    holdout = {k: v for k, v in result.holdout.items() if not k.startswith("_")}
    write_json({"schema_version": 1, "kind": "holdout", **holdout, "config": config.echo()}, paths["holdout"])
    write_json(result.throughput, paths["throughput"])
    write_histogram(result.solved.purchase_counts(), paths["optimal_counts"])
    write_histogram([s.return_over_daily for s in result.solved], paths["optimal_rod"], bin_width=0.5)
    if "_policy_counts" in result.holdout:
        paths["policy_counts"] = out / "policy_purchase_counts_hist.csv"
        paths["policy_rod"] = out / "policy_rod_hist.csv"
        write_histogram(result.holdout["_policy_counts"], paths["policy_counts"])
        write_histogram(result.holdout["_policy_rods"], paths["policy_rod"], bin_width=0.5)
    return paths


# -- per-seed outcomes for the harnesses --------------------------------------


def gadle_outcome(config: RunConfig, seed: int | None = None) -> RunOutcome:
    cfg = config if seed is None else config.with_seed(seed)
    return RunOutcome(run_pipeline(cfg.with_section("run", parallelism=1), write=False).report)


def rl_outcome(config: RunConfig, method: str, seed: int | None = None) -> tuple[RunOutcome, Agent]:
    cfg = config if seed is None else config.with_seed(seed)
    series = load_series(cfg)
    episodes = training_episodes(cfg, series)
    if method == "dqn":
        agent, curves = train_dqn(episodes, cfg.dqn, rng_seed=cfg.seed)
    elif method == "a2c":
        agent, curves = train_a2c(episodes, cfg.a2c, rng_seed=cfg.seed)
    else:
        raise ConfigError(f"unknown RL method {method!r}")
    report = backtest_policy(cfg, series, agent_fn(agent))
    return RunOutcome(report, curves), agent


def method_outcome(config: RunConfig, method: str, seed: int | None = None) -> RunOutcome:
    if method == "gadle":
        return gadle_outcome(config, seed)
    return rl_outcome(config, method, seed)[0]


def run_consistency(config: RunConfig, method: str = "gadle", n_seeds: int | None = None) -> ConsistencyReport:
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    pipeline = functools.partial(method_outcome, config, method)
    return consistency_run(
        pipeline, n_seeds or config.harness.consistency_seeds, base_seed=config.seed,
        method=method.upper(), parallelism=config.run.parallelism,
    )


# Valid ranges used to clamp +/- perturbations.
GA_DOMAINS = {
    "population_size": (2, float("inf")),
    "crossover_probability": (0.0, 1.0),
    "mutation_probability": (0.0, 1.0),
    "elite_ratio": (0.0, 1.0),
    "parents_portion": (0.0, 1.0),
    "max_iterations": (0, float("inf")),
    "no_improvement_stop": (1, float("inf")),
}
A2C_DOMAINS = {
    "epsilon": (0.0, 1.0),
    "epsilon_min": (0.0, 1.0),
    "epsilon_decay": (1e-9, 1.0),
    "learning_rate": (0.0, float("inf")),
    "lr_decay_steps": (1, float("inf")),
    "lr_decay_rate": (1e-9, 1.0),
    "discount": (0.0, 1.0 - 1e-9),
}


def perturbations_for(config: RunConfig, method: str) -> list[Perturbation]:
    h = config.harness
    m = h.sensitivity_magnitude
    if method == "gadle":
        values = config.ga.to_dict()
        rows = scale_perturbations(values, h.gadle_parameters, m, GA_DOMAINS)
        rows += scale_perturbations(values, h.gadle_decrease_only, m, GA_DOMAINS, ("dec",))
        rows += scale_perturbations(values, h.gadle_increase_only, m, GA_DOMAINS, ("inc",))
        rows += [Perturbation(f"crossover_type {c}", {"crossover_type": c}) for c in h.gadle_crossover_types]
        return rows
    if method == "a2c":
        values = config.a2c.to_dict()
        rows = scale_perturbations(values, h.a2c_decrease_only, m, A2C_DOMAINS, ("dec",))
        rows += scale_perturbations(values, h.a2c_parameters, m, A2C_DOMAINS)
        return rows
    raise ConfigError(f"sensitivity is defined for gadle and a2c, not {method!r}")


def _perturbed_outcome(config: RunConfig, method: str, overrides: dict) -> RunOutcome:
    section = "ga" if method == "gadle" else method
    return method_outcome(config.with_section(section, **overrides), method)


def run_sensitivity(config: RunConfig, method: str = "gadle",
                    perturbations: Sequence[Perturbation] | None = None) -> SensitivityReport:
    rows = perturbations if perturbations is not None else perturbations_for(config, method)
    run = functools.partial(_perturbed_outcome, config, method)
    return sensitivity_run(run, rows, method=method.upper())
