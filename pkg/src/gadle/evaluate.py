"""Rolling 30-day back-tests against a buy-daily benchmark, plus the
multi-seed consistency and +/-20% sensitivity harnesses.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .episodes import CONTEXT_DAYS, DECISION_DAYS, Episode, build_episode, window_at
from .errors import RangeTooShort
from .ingest import DailyPriceMode, PriceSeries
from .metrics import agent_average, pcod, rod

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class WindowResult:
    label: str
    agent_avg_price: float
    daily_avg_price: float
    rod: float
    agent_purchases: int
    daily_purchases: int
    pcod: int
    no_purchases: bool = False

    @classmethod
    def from_prices(cls, raw_prices, genes, label: str = "") -> "WindowResult":
        p = np.asarray(raw_prices, dtype=float)
        g = np.asarray(genes)
        n = int(g.sum())
        return cls(
            label=label,
            agent_avg_price=agent_average(p, g),
            daily_avg_price=float(p.mean()),
            rod=rod(p, g),
            agent_purchases=2 * n,
            daily_purchases=int(g.size),
            pcod=pcod(g),
            no_purchases=n == 0,
        )

    @classmethod
    def from_figures(cls, label, agent_avg, daily_avg, agent_purchases, daily_purchases=30):
        """A window row given its reported averages and unit counts."""
        none = agent_purchases == 0
        return cls(
            label,
            float(agent_avg) if not none else float("nan"),
            float(daily_avg),
            0.0 if none else (1.0 - agent_avg / daily_avg) * 100.0,
            int(agent_purchases),
            int(daily_purchases),
            int(agent_purchases - daily_purchases),
            none,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isnan(d["agent_avg_price"]):
            d["agent_avg_price"] = None
        return d


def aggregate(windows: Sequence[WindowResult], label: str = "Overall") -> WindowResult:
    """Overall row: purchase-weighted agent price, plain mean of daily prices."""
    if not windows:
        raise ValueError("no windows to aggregate")
    units = sum(w.agent_purchases for w in windows)
    daily = sum(w.daily_avg_price for w in windows) / len(windows)
    if units:
        agent = sum(w.agent_avg_price * w.agent_purchases for w in windows if w.agent_purchases) / units
        r = (1.0 - agent / daily) * 100.0
    else:
        agent, r = float("nan"), 0.0
    return WindowResult(
        label,
        agent,
        daily,
        r,
        units,
        sum(w.daily_purchases for w in windows),
        sum(w.pcod for w in windows),
        units == 0,
    )


@dataclass
class BacktestReport:
    windows: list[WindowResult]
    overall: WindowResult
    price_mode: str = DailyPriceMode.OHLC4.value
    config: dict = field(default_factory=dict)

    @classmethod
    def from_windows(cls, windows, **kw) -> "BacktestReport":
        return cls(list(windows), aggregate(windows), **kw)

    @property
    def mean_window_pcod(self) -> float:
        return self.overall.pcod / len(self.windows)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "kind": "backtest",
            "price_mode": self.price_mode,
            "windows": [w.to_dict() for w in self.windows],
            "overall": self.overall.to_dict(),
            "mean_window_pcod": self.mean_window_pcod,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BacktestReport":
        def row(r):
            r = dict(r)
            if r["agent_avg_price"] is None:
                r["agent_avg_price"] = float("nan")
            return WindowResult(**r)

        return cls([row(w) for w in d["windows"]], row(d["overall"]), d["price_mode"], d.get("config", {}))

    def to_text(self) -> str:
        head = f"{'Period':<27}{'Agent':>9}{'Daily':>9}{'RoD':>9}{'Units':>7}{'Daily':>7}{'PCoD':>6}"
        lines = [f"price mode: {self.price_mode}", head, "-" * len(head)]
        for w in [*self.windows, self.overall]:
            if w is self.overall:
                lines.append("-" * len(head))
            agent = "-" if w.no_purchases else f"{w.agent_avg_price:.2f}"
            lines.append(
                f"{w.label:<27}{agent:>9}{w.daily_avg_price:>9.2f}{w.rod:>8.2f}%"
                f"{w.agent_purchases:>7}{w.daily_purchases:>7}{w.pcod:>6}"
            )
        return "\n".join(lines) + "\n"


def backtest_windows(series: PriceSeries, start: dt.date, end: dt.date,
                     mode=DailyPriceMode.OHLC4) -> list[Episode]:
    """Consecutive 30-day decision windows covering ``[start, end]``.

    Each window is scaled on the 30 bars just before it. When the series
    holds 30 bars before ``start`` the first window opens on ``start``;
    otherwise the first 30 in-range bars serve as its context. A trailing
    partial window is dropped.
    """
    mode = DailyPriceMode.parse(mode)
    dates = series.dates
    first = next((i for i, d in enumerate(dates) if d >= start), len(dates))
    stop = next((i for i, d in enumerate(dates) if d > end), len(dates))
    decision = first if first >= CONTEXT_DAYS else first + CONTEXT_DAYS
    if stop - decision < DECISION_DAYS:
        need = DECISION_DAYS if first >= CONTEXT_DAYS else CONTEXT_DAYS + DECISION_DAYS
        raise RangeTooShort(f"{stop - first} trading days in {start}..{end}; need {need}")
    prices = series.prices(mode)
    out = []
    k = decision
    while k + DECISION_DAYS <= stop:
        out.append(build_episode(window_at(series, k - CONTEXT_DAYS, mode, prices), len(out)))
        k += DECISION_DAYS
    return out


def period_label(ep: Episode) -> str:
    return f"{ep.start_date.isoformat()} - {ep.end_date.isoformat()}"


def backtest(policy_fn: Callable[[Episode], Sequence[int]], series: PriceSeries,
             start: dt.date, end: dt.date, mode=DailyPriceMode.OHLC4,
             config: dict | None = None) -> BacktestReport:
    mode = DailyPriceMode.parse(mode)
    eps = backtest_windows(series, start, end, mode)
    rows = [WindowResult.from_prices(ep.raw_prices, policy_fn(ep), period_label(ep)) for ep in eps]
    return BacktestReport.from_windows(rows, price_mode=mode.value, config=config or {})


# -- harnesses ----------------------------------------------------------------


@dataclass
class RunOutcome:
    """What one train-and-backtest pipeline run produces."""

    report: BacktestReport
    curves: object = None  # rl.TrainingCurves for RL methods
    failed: bool = False
    reason: str = ""


def _outcome_failed(outcome: RunOutcome) -> tuple[bool, str]:
    if outcome.failed:
        return True, outcome.reason
    if outcome.curves is None:
        return False, ""
    from .rl import detect_failed_run

    verdict = detect_failed_run(outcome.curves)
    return verdict.failed, verdict.reason


def _mean_std(xs):
    if not xs:
        return float("nan"), float("nan")
    if len(xs) == 1:
        return float(xs[0]), 0.0
    return statistics.fmean(xs), statistics.stdev(xs)


@dataclass
class ConsistencyReport:
    method: str
    seeds: list[int]
    rod: list[float | None]
    pcod: list[float | None]
    failed: list[bool]
    reasons: list[str]

    def _ok(self, xs):
        return [x for x, f in zip(xs, self.failed) if not f]

    @property
    def mean_rod(self):
        return _mean_std(self._ok(self.rod))[0]

    @property
    def std_rod(self):
        return _mean_std(self._ok(self.rod))[1]

    @property
    def mean_pcod(self):
        return _mean_std(self._ok(self.pcod))[0]

    @property
    def std_pcod(self):
        return _mean_std(self._ok(self.pcod))[1]

    @property
    def fail_percent(self) -> float:
        return 100.0 * sum(self.failed) / len(self.failed)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "kind": "consistency",
            "method": self.method,
            "runs": [
                {"seed": s, "rod": r, "pcod": p, "failed": f, "reason": why}
                for s, r, p, f, why in zip(self.seeds, self.rod, self.pcod, self.failed, self.reasons)
            ],
            "mean_rod": self.mean_rod,
            "std_rod": self.std_rod,
            "mean_pcod": self.mean_pcod,
            "std_pcod": self.std_pcod,
            "fail_percent": self.fail_percent,
        }

    def to_text(self) -> str:
        return (
            f"{'Method':<14}{'Mean RoD':>10}{'Std RoD':>10}{'Mean PCoD':>11}{'Std PCoD':>10}{'Fail %':>8}\n"
            f"{self.method:<14}{self.mean_rod:>10.2f}{self.std_rod:>10.2f}"
            f"{self.mean_pcod:>11.2f}{self.std_pcod:>10.2f}{self.fail_percent:>7.1f}%\n"
        )


def _run_seed(args):
    pipeline, seed = args
    return pipeline(seed)


def consistency_run(pipeline: Callable[[int], RunOutcome], n_seeds: int = 40, base_seed: int = 0,
                    method: str = "GADLE", parallelism: int = 1) -> ConsistencyReport:
    """Re-run a whole pipeline under ``n_seeds`` different seeds.

    RoD is the overall back-test RoD of each run; PCoD is its mean
    per-window PCoD. Failed runs are excluded from the statistics.
    """
    if n_seeds < 2:
        raise ValueError("a consistency run needs at least two seeds")
    seeds = [base_seed + i for i in range(n_seeds)]
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(_run_seed, [(pipeline, s) for s in seeds]))
    else:
        outcomes = [pipeline(s) for s in seeds]
    rods, pcods, fails, reasons = [], [], [], []
    for out in outcomes:
        bad, why = _outcome_failed(out)
        fails.append(bad)
        reasons.append(why)
        rods.append(None if bad else out.report.overall.rod)
        pcods.append(None if bad else out.report.mean_window_pcod)
    return ConsistencyReport(method, seeds, rods, pcods, fails, reasons)


@dataclass(frozen=True)
class Perturbation:
    label: str
    overrides: dict
    note: str = ""


def scale_perturbations(values: Mapping[str, float], params: Iterable[str], magnitude: float = 0.2,
                        domains: Mapping[str, tuple] | None = None,
                        directions=("dec", "inc")) -> list[Perturbation]:
    """``value * (1 -/+ magnitude)`` for each listed parameter.

    Integers are rounded. A result outside its ``(lo, hi)`` domain is
    clamped to the bound and the clamp is noted on the row.
    """
    domains = domains or {}
    out = []
    for name in params:
        base = values[name]
        for direction in directions:
            factor = 1.0 - magnitude if direction == "dec" else 1.0 + magnitude
            v = base * factor
            if isinstance(base, int) and not isinstance(base, bool):
                v = int(round(v))
            note = ""
            lo, hi = domains.get(name, (-math.inf, math.inf))
            if v < lo or v > hi:
                clamped = min(max(v, lo), hi)
                note = f"{v!r} outside [{lo}, {hi}], clamped to {clamped!r}"
                v = clamped
            out.append(Perturbation(f"{name} {direction}", {name: v}, note))
    return out


@dataclass
class SensitivityRow:
    label: str
    overrides: dict
    agent_avg: float | None
    daily_avg: float | None
    rod: float | None
    pcod: float | None
    failed: bool
    note: str = ""


@dataclass
class SensitivityReport:
    method: str
    baseline: SensitivityRow
    rows: list[SensitivityRow]

    def _ok(self):
        return [r for r in self.rows if not r.failed]

    def _mean(self, attr, absolute=False):
        ok = self._ok()
        if not ok:
            return float("nan")
        base = getattr(self.baseline, attr)
        if absolute:
            return statistics.fmean(abs(getattr(r, attr) - base) for r in ok)
        return statistics.fmean(getattr(r, attr) for r in ok)

    def average(self) -> dict:
        return {k: self._mean(k) for k in ("agent_avg", "daily_avg", "rod", "pcod")}

    def deviation(self) -> dict:
        return {k: self._mean(k, absolute=True) for k in ("agent_avg", "daily_avg", "rod", "pcod")}

    @property
    def n_failed(self) -> int:
        return sum(r.failed for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "kind": "sensitivity",
            "method": self.method,
            "baseline": asdict(self.baseline),
            "rows": [asdict(r) for r in self.rows],
            "average": self.average(),
            "avg_absolute_deviation": self.deviation(),
            "failed": f"{self.n_failed} / {len(self.rows)}",
        }

    def to_text(self) -> str:
        lines = [f"{'Parameter change':<32}{'Agent':>9}{'Daily':>9}{'RoD':>9}{'PCoD':>8}"]

        def fmt(r):
            if r.failed:
                return f"{r.label:<32}{'FAIL':>9}{'FAIL':>9}{'FAIL':>9}{'FAIL':>8}"
            return f"{r.label:<32}{r.agent_avg:>9.2f}{r.daily_avg:>9.2f}{r.rod:>8.2f}%{r.pcod:>8.2f}"

        lines.append(fmt(self.baseline))
        lines += [fmt(r) for r in self.rows]
        d = self.deviation()
        lines.append(f"{'Avg. absolute deviation':<32}{d['agent_avg']:>9.2f}{d['daily_avg']:>9.2f}"
                     f"{d['rod']:>8.2f}%{d['pcod']:>8.2f}")
        lines.append(f"failed: {self.n_failed} / {len(self.rows)}")
        return "\n".join(lines) + "\n"


def _row(label, overrides, outcome: RunOutcome, note="") -> SensitivityRow:
    bad, why = _outcome_failed(outcome)
    if bad:
        return SensitivityRow(label, overrides, None, None, None, None, True, "; ".join(x for x in (note, why) if x))
    o = outcome.report.overall
    return SensitivityRow(label, overrides, o.agent_avg_price, o.daily_avg_price, o.rod,
                          outcome.report.mean_window_pcod, False, note)


def sensitivity_run(run: Callable[[dict], RunOutcome], perturbations: Sequence[Perturbation],
                    method: str = "GADLE") -> SensitivityReport:
    """Retrain and back-test once per perturbation (and once at baseline).

    ``run(overrides)`` executes the pipeline with the given parameter
    overrides applied to its baseline configuration.
    """
    baseline = _row("Baseline", {}, run({}))
    rows = [_row(p.label, p.overrides, run(p.overrides), p.note) for p in perturbations]
    return SensitivityReport(method, baseline, rows)


def throughput_report(episodes: int, seconds: float, hardware: str = "") -> dict:
    hours = seconds / 3600.0
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "throughput",
        "total_seconds": seconds,
        "total_time": _human(seconds),
        "episodes": int(episodes),
        "episodes_per_hour": episodes / hours if hours > 0 else float("inf"),
        "hardware": hardware,
    }


def _human(seconds: float) -> str:
    if seconds >= 3600:
        return f"{seconds / 3600:.1f} hrs"
    if seconds >= 60:
        return f"{seconds / 60:.0f} min"
    return f"{seconds:.1f} s"


def hardware_note() -> str:
    import os
    import platform

    return f"{platform.processor() or platform.machine()}, {os.cpu_count()} logical CPUs"


def histogram(values) -> list[tuple]:
    vals, counts = np.unique(np.asarray(values), return_counts=True)
    return [(v.item(), int(c)) for v, c in zip(vals, counts)]


def write_histogram(values, path, bin_width: float | None = None) -> None:
    """``value,count`` rows; real values are binned when ``bin_width`` is set."""
    v = np.asarray(values, dtype=float)
    if bin_width:
        v = np.floor(v / bin_width) * bin_width
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "count"])
        for value, count in histogram(v):
            w.writerow([int(value) if float(value).is_integer() and not bin_width else value, count])


def write_json(obj: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")
