"""``gadle`` command line.

Each subcommand reads the effective configuration (defaults, profile,
``--config`` file, flags), runs one stage and writes its artifacts under
``--out``. Failures print one line ``error: <Category>: <detail>`` to
stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
import time
from pathlib import Path

from . import pipeline
from .config import PROFILES, RunConfig, load_config
from .errors import ConfigError, GadleError, MissingModel
from .evaluate import hardware_note, throughput_report, write_histogram, write_json
from .gasolver import SolvedEpisodeSet
from .ingest import load_price_csv, serialize_price_csv
from .neural import load_model, save_model, write_history

log = logging.getLogger("gadle")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    default = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", metavar="PATH", default=default, help="INI run configuration")
    g.add_argument("--seed", type=int, metavar="N", default=default, help="master seed")
    g.add_argument("--out", metavar="DIR", default=default, help="output directory")
    g.add_argument("--profile", choices=PROFILES, default=default, help="default set (paper or desk)")
    g.add_argument("--data", metavar="CSV", default=default, help="price file (overrides [data] path)")
    g.add_argument("-j", "--parallelism", type=int, metavar="N", default=default,
                   help="worker processes for solving and harness runs")
    g.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gadle",
        description="Genetic-algorithm labelled, neural-network distilled daily investment policy.",
        parents=[_global_flags(False)],
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = _global_flags(True)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common], description=help_)

    add("validate", "parse a price file and report its coverage")
    add("sample", "draw training episodes and write episodes.jsonl")
    p = add("solve", "solve episodes with the genetic algorithm")
    p.add_argument("--episodes", metavar="JSONL", help="episode file (default: sample afresh)")
    p = add("train-policy", "fit the policy network on solved episodes")
    p.add_argument("--episodes", metavar="JSONL", help="episode file (default: sample afresh)")
    p.add_argument("--solved", metavar="JSONL", help="solved set (default: solve afresh)")
    p = add("backtest", "back-test a trained policy over the configured range")
    p.add_argument("--model", metavar="JSON", required=True)
    add("run", "whole pipeline: sample, solve, fit, back-test")
    add("bench-dqn", "train and back-test the deep Q-learning baseline")
    add("bench-a2c", "train and back-test the actor-critic baseline")
    p = add("consistency", "repeat a method under several seeds")
    p.add_argument("--method", choices=pipeline.METHODS, default="gadle")
    p.add_argument("--seeds", type=int, metavar="N", help="number of seeds (default from [harness])")
    p = add("sensitivity", "retrain under +/- perturbations of the hyperparameters")
    p.add_argument("--method", choices=("gadle", "a2c"), default="gadle")
    p = add("daily-run", "feed new bars to the offline daily decision loop")
    p.add_argument("--state", metavar="JSON", required=True, help="state file (created with --init-from)")
    p.add_argument("--model", metavar="JSON", required=True)
    p.add_argument("--bars", metavar="CSV", required=True, help="new bars, oldest first")
    p.add_argument("--init-from", metavar="CSV", help="history used to create a missing state file")
    p.add_argument("--through", type=dt.date.fromisoformat, metavar="DATE",
                   help="last history date used by --init-from")
    p = add("synth-data", "write a seeded geometric random walk in the Yahoo CSV layout")
    p.add_argument("--start", type=dt.date.fromisoformat, default=dt.date(2000, 1, 3))
    p.add_argument("--end", type=dt.date.fromisoformat, default=dt.date(2020, 12, 31))
    p.add_argument("--initial-price", type=float, default=50.0)
    p.add_argument("--drift", type=float, default=0.07, help="annual drift")
    p.add_argument("--volatility", type=float, default=0.012, help="daily volatility")
    p.add_argument("--symbol", default="SYN")
    p.add_argument("--file", metavar="CSV", help="output file (default: <out>/synthetic.csv)")
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config, args.profile, args.seed, args.out)
    if args.data is not None:
        cfg = cfg.with_section("data", path=args.data)
    if args.parallelism is not None:
        cfg = cfg.with_section("run", parallelism=args.parallelism)
    return cfg


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    return out


def _say(msg: str) -> None:
    print(msg, flush=True)


def _episodes(cfg, path):
    from .episodes import read_episodes

    if path:
        return read_episodes(path)
    return pipeline.training_episodes(cfg, pipeline.load_series(cfg))


def cmd_validate(cfg, args):
    series = pipeline.load_series(cfg)
    prices = series.prices(cfg.data.price_mode)
    info = {
        "symbol": series.symbol,
        "bars": len(series),
        "first": series.dates[0].isoformat(),
        "last": series.dates[-1].isoformat(),
        "price_mode": cfg.data.price_mode.value,
        "min_price": float(prices.min()),
        "max_price": float(prices.max()),
    }
    _say(json.dumps(info))


def cmd_sample(cfg, args):
    from .episodes import write_episodes

    out = _out(cfg)
    eps = _episodes(cfg, None)
    write_episodes(eps, out / "episodes.jsonl")
    _say(f"{len(eps)} episodes -> {out / 'episodes.jsonl'}")


def cmd_solve(cfg, args):
    out = _out(cfg)
    eps = _episodes(cfg, args.episodes)
    solved = pipeline.solve(cfg, eps)
    solved.write(out / "solved.jsonl")
    write_json(throughput_report(len(solved), solved.wall_seconds, hardware_note()), out / "throughput.json")
    write_histogram(solved.purchase_counts(), out / "optimal_purchase_counts_hist.csv")
    write_histogram([s.return_over_daily for s in solved], out / "optimal_rod_hist.csv", bin_width=0.5)
    s = solved.summary()
    _say(f"{len(solved)} episodes solved, mean purchases {s['mean_purchase_count']:.2f}, "
         f"{solved.episodes_per_hour:.0f} ep/hr -> {out / 'solved.jsonl'}")


def cmd_train_policy(cfg, args):
    out = _out(cfg)
    eps = _episodes(cfg, args.episodes)
    solved = SolvedEpisodeSet.read(args.solved) if args.solved else pipeline.solve(cfg, eps)
    result, data = pipeline.train_policy(cfg, solved, eps)
    save_model(result.policy, out / "model.json", pipeline.model_extra(cfg, result))
    write_history(result.history, out / "training.csv")
    holdout = pipeline.holdout_summary(result.policy, data, eps, solved)
    holdout = {k: v for k, v in holdout.items() if not k.startswith("_")}
    write_json({"schema_version": 1, "kind": "holdout", **holdout, "config": cfg.echo()}, out / "holdout.json")
    _say(f"best epoch {result.best_epoch}, test accuracy {holdout['test_accuracy']:.4f} -> {out / 'model.json'}")


def _load_policy(path):
    if not Path(path).is_file():
        raise MissingModel(f"no trained model at {path}")
    return load_model(path)


def _write_report(out: Path, report, stem="backtest"):
    write_json(report.to_dict(), out / f"{stem}.json")
    (out / f"{stem}.txt").write_text(report.to_text(), encoding="utf-8")
    _say(report.to_text().rstrip())


def cmd_backtest(cfg, args):
    out = _out(cfg)
    policy = _load_policy(args.model)
    report = pipeline.backtest_policy(cfg, pipeline.load_series(cfg), pipeline.policy_fn(policy))
    _write_report(out, report)


def cmd_run(cfg, args):
    result = pipeline.run_pipeline(cfg, cfg.run.output_dir)
    _say(result.report.to_text().rstrip())
    _say(f"artifacts in {cfg.run.output_dir}")


def _bench(cfg, method):
    out = _out(cfg)
    t0 = time.perf_counter()
    outcome, agent = pipeline.rl_outcome(cfg, method)
    seconds = time.perf_counter() - t0
    from .rl import detect_failed_run

    verdict = detect_failed_run(outcome.curves)
    agent.save(out / f"{method}_agent.json", {"run_config": cfg.echo()})
    outcome.curves.write_csv(out / f"{method}_curves.csv")
    episodes = getattr(cfg, method).episodes
    write_json(throughput_report(episodes, seconds, hardware_note()), out / f"{method}_throughput.json")
    write_json({"schema_version": 1, "kind": "run_verdict", "method": method,
                "failed": verdict.failed, "reason": verdict.reason}, out / f"{method}_verdict.json")
    _write_report(out, outcome.report, f"{method}_backtest")
    _say("run FAILED: " + verdict.reason if verdict.failed else "run ok")


def cmd_bench_dqn(cfg, args):
    _bench(cfg, "dqn")


def cmd_bench_a2c(cfg, args):
    _bench(cfg, "a2c")


def cmd_consistency(cfg, args):
    out = _out(cfg)
    report = pipeline.run_consistency(cfg, args.method, args.seeds)
    d = report.to_dict()
    d["config"] = cfg.echo()
    write_json(d, out / f"consistency_{args.method}.json")
    (out / f"consistency_{args.method}.txt").write_text(report.to_text(), encoding="utf-8")
    _say(report.to_text().rstrip())


def cmd_sensitivity(cfg, args):
    out = _out(cfg)
    report = pipeline.run_sensitivity(cfg, args.method)
    d = report.to_dict()
    d["config"] = cfg.echo()
    write_json(d, out / f"sensitivity_{args.method}.json")
    (out / f"sensitivity_{args.method}.txt").write_text(report.to_text(), encoding="utf-8")
    _say(report.to_text().rstrip())


def cmd_daily_run(cfg, args):
    from dataclasses import asdict

    from .daily import DailyRunState, advance, init_daily_state

    policy = _load_policy(args.model)
    state_path = Path(args.state)
    if state_path.exists():
        state = DailyRunState.load(state_path)
    elif args.init_from:
        state = init_daily_state(load_price_csv(args.init_from), cfg.data.price_mode, args.through)
    else:
        raise ConfigError(f"no state file at {state_path}; pass --init-from to create one")
    for bar in load_price_csv(args.bars).bars:
        rec, closed = advance(state, policy, bar)
        state.save(state_path)
        _say(json.dumps({"record": asdict(rec)}))
        if closed is not None:
            _say(json.dumps({"window": closed.to_dict()}))


def cmd_synth_data(cfg, args):
    from .synth import geometric_walk

    series = geometric_walk(
        seed=cfg.seed, start=args.start, end=args.end, initial_price=args.initial_price,
        annual_drift=args.drift, daily_volatility=args.volatility, symbol=args.symbol,
    )
    path = Path(args.file) if args.file else Path(cfg.run.output_dir) / "synthetic.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_price_csv(series), encoding="utf-8")
    _say(f"{len(series)} bars -> {path}")


COMMANDS = {
    "validate": cmd_validate,
    "sample": cmd_sample,
    "solve": cmd_solve,
    "train-policy": cmd_train_policy,
    "backtest": cmd_backtest,
    "run": cmd_run,
    "bench-dqn": cmd_bench_dqn,
    "bench-a2c": cmd_bench_a2c,
    "consistency": cmd_consistency,
    "sensitivity": cmd_sensitivity,
    "daily-run": cmd_daily_run,
    "synth-data": cmd_synth_data,
}


def _category(exc: BaseException) -> str:
    if isinstance(exc, GadleError):
        return exc.category
    if isinstance(exc, OSError):
        return "FileError"
    return "InvalidValue"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](cfg, args)
    except (GadleError, OSError, ValueError) as exc:
        detail = " ".join(str(exc).split())
        print(f"error: {_category(exc)}: {detail}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
