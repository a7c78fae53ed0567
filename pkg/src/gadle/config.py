"""Run configuration: one sectioned INI file covering every stage.

Precedence, lowest first: built-in defaults, the chosen profile, the
config file, then command-line flags. Unknown sections or keys are
rejected so that a typo never silently falls back to a default.
"""

from __future__ import annotations

import configparser
import datetime as dt
import enum
import io
from dataclasses import dataclass, field, fields, replace
from typing import Any

from .errors import ConfigError
from .gasolver import GaConfig
from .ingest import DEFAULT_MODE, DailyPriceMode
from .neural import DEFAULT_HIDDEN, DEFAULT_TEST_FRACTION, FitConfig
from .rl import A2cConfig, DqnConfig

PROFILES = ("paper", "desk")

# Execution-only settings: they change where and how fast a run happens,
# never what it computes, so they stay out of artifact echoes.
EXECUTION_KEYS = {"run": ("parallelism", "output_dir")}


@dataclass(frozen=True)
class DataSection:
    path: str = ""
    symbol: str = ""
    price_mode: DailyPriceMode = DEFAULT_MODE
    train_start: dt.date = dt.date(2000, 1, 1)
    train_end: dt.date = dt.date(2019, 12, 31)
    backtest_start: dt.date = dt.date(2020, 1, 1)
    backtest_end: dt.date = dt.date(2020, 12, 31)

    def __post_init__(self):
        object.__setattr__(self, "price_mode", DailyPriceMode.parse(self.price_mode))
        if self.train_start > self.train_end or self.backtest_start > self.backtest_end:
            raise ConfigError("date ranges must have start <= end")


@dataclass(frozen=True)
class SamplerSection:
    episodes: Any = "all"  # "all" or a positive count

    def __post_init__(self):
        v = self.episodes
        if isinstance(v, str):
            if v.strip().lower() == "all":
                object.__setattr__(self, "episodes", "all")
                return
            try:
                v = int(v)
            except ValueError:
                raise ConfigError(f"sampler.episodes must be 'all' or an integer, got {v!r}") from None
        if int(v) < 1:
            raise ConfigError("sampler.episodes must be positive")
        object.__setattr__(self, "episodes", int(v))


@dataclass(frozen=True)
class FitSection:
    epochs: int = 200
    mini_batch_size: int = 64
    learning_rate: float = 0.01
    early_stopping_patience: int = 20
    hidden: tuple = DEFAULT_HIDDEN
    # A fraction scales with the episode count; at 4,245 episodes it is 500.
    test_size: float = DEFAULT_TEST_FRACTION
    validation_fraction: float = 0.33

    def fit_config(self, seed: int) -> FitConfig:
        return FitConfig(
            epochs=self.epochs,
            mini_batch_size=self.mini_batch_size,
            learning_rate=self.learning_rate,
            shuffle_seed=seed,
            early_stopping_patience=self.early_stopping_patience,
            hidden=tuple(self.hidden),
            init_seed=seed,
        )


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    parallelism: int = 1
    output_dir: str = "out"
    profile: str = "paper"

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; choose from {', '.join(PROFILES)}")
        if self.parallelism < 1:
            raise ConfigError("run.parallelism must be at least 1")


@dataclass(frozen=True)
class HarnessSection:
    consistency_seeds: int = 40
    sensitivity_magnitude: float = 0.2
    gadle_parameters: tuple = (
        "population_size", "crossover_probability", "mutation_probability",
    )
    gadle_decrease_only: tuple = ("elite_ratio",)
    gadle_increase_only: tuple = ("parents_portion",)
    gadle_crossover_types: tuple = ("two_point", "one_point")
    a2c_parameters: tuple = (
        "epsilon_min", "epsilon_decay", "learning_rate", "lr_decay_steps", "lr_decay_rate",
    )
    a2c_decrease_only: tuple = ("epsilon",)


SECTIONS = {
    "data": DataSection,
    "sampler": SamplerSection,
    "ga": GaConfig,
    "fit": FitSection,
    "dqn": DqnConfig,
    "a2c": A2cConfig,
    "run": RunSection,
    "harness": HarnessSection,
}

# What the desk profile changes relative to the full-scale defaults.
DESK_OVERRIDES = {
    "sampler": {"episodes": 300},
    "fit": {"epochs": 60},
    "dqn": {"episodes": 150},
    "a2c": {"episodes": 3000},
    "harness": {"consistency_seeds": 5},
}


@dataclass(frozen=True)
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    ga: GaConfig = field(default_factory=GaConfig)
    fit: FitSection = field(default_factory=FitSection)
    dqn: DqnConfig = field(default_factory=DqnConfig)
    a2c: A2cConfig = field(default_factory=A2cConfig)
    run: RunSection = field(default_factory=RunSection)
    harness: HarnessSection = field(default_factory=HarnessSection)

    @property
    def seed(self) -> int:
        return self.run.seed

    def with_section(self, name: str, **changes) -> "RunConfig":
        try:
            section = replace(getattr(self, name), **changes)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}] {exc}") from None
        return replace(self, **{name: section})

    def with_seed(self, seed: int) -> "RunConfig":
        return self.with_section("run", seed=int(seed))

    def to_dict(self, execution: bool = True) -> dict:
        out = {}
        for name in SECTIONS:
            section = getattr(self, name)
            skip = () if execution else EXECUTION_KEYS.get(name, ())
            out[name] = {f.name: _plain(getattr(section, f.name)) for f in fields(section) if f.name not in skip}
        return out

    def echo(self) -> dict:
        """Everything that determines a run's results, JSON-ready."""
        return self.to_dict(execution=False)

    def to_ini(self, execution: bool = True) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for name, values in self.to_dict(execution).items():
            parser[name] = {k: _ini_text(v) for k, v in values.items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d: dict, base: "RunConfig | None" = None) -> "RunConfig":
        cfg = base or cls()
        for name, values in d.items():
            cfg = _apply(cfg, name, values)
        return cfg


def _plain(v):
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, dt.date):
        return v.isoformat()
    if isinstance(v, tuple):
        return list(v)
    return v


def _ini_text(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ", ".join(str(x) for x in v)
    return str(v)


_BOOLEAN = configparser.ConfigParser.BOOLEAN_STATES


def _coerce(section: str, key: str, default, raw):
    """Convert ``raw`` (text from an INI file or a JSON value) to the type of ``default``."""
    where = f"[{section}] {key}"
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                return raw
            return _BOOLEAN[str(raw).strip().lower()]
        if isinstance(default, enum.Enum):
            return type(default)(str(raw).strip().lower())
        if isinstance(default, dt.date):
            return raw if isinstance(raw, dt.date) else dt.date.fromisoformat(str(raw).strip())
        if isinstance(default, tuple):
            items = raw if isinstance(raw, (list, tuple)) else [x for x in str(raw).split(",") if x.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(x.strip()) if isinstance(x, str) else kind(x) for x in items)
        if isinstance(default, int):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError("expected an integer")
            return int(raw)
        if isinstance(default, float):
            text = str(raw).strip()
            # A whole number here is a count (e.g. test_size = 500), not a fraction.
            if key == "test_size" and text.isdigit():
                return int(text)
            return float(raw)
        return raw if not isinstance(raw, str) else raw.strip()
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: cannot read {raw!r} ({exc})") from None


def _apply(cfg: RunConfig, name: str, values: dict) -> RunConfig:
    if name not in SECTIONS:
        raise ConfigError(f"unknown section [{name}]")
    section = getattr(cfg, name)
    known = {f.name: f for f in fields(section)}
    changes = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        changes[key] = _coerce(name, key, getattr(type(section)(), key), raw)
    return cfg.with_section(name, **changes)


def parse_ini(text: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from None
    return {s: dict(parser[s]) for s in parser.sections()}


def profile_config(profile: str = "paper") -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {', '.join(PROFILES)}")
    cfg = RunConfig().with_section("run", profile=profile)
    if profile == "desk":
        cfg = RunConfig.from_dict(DESK_OVERRIDES, cfg)
    return cfg


def load_config(path=None, profile: str | None = None, seed: int | None = None,
                output_dir: str | None = None) -> RunConfig:
    """Build the effective configuration from defaults, profile, file and flags."""
    file_values = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                file_values = parse_ini(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    chosen = profile or file_values.get("run", {}).get("profile", "paper").strip()
    cfg = RunConfig.from_dict(file_values, profile_config(chosen))
    if profile is not None:
        cfg = cfg.with_section("run", profile=profile)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    if output_dir is not None:
        cfg = cfg.with_section("run", output_dir=str(output_dir))
    return cfg


__all__ = [
    "DataSection", "SamplerSection", "FitSection", "RunSection", "HarnessSection",
    "RunConfig", "PROFILES", "DESK_OVERRIDES", "load_config", "parse_ini", "profile_config",
]
