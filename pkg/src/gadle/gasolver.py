"""Episode loss and a classical binary genetic algorithm that minimises it.

A gene of 1 means "buy twice" that day, 0 means "skip". The loss trades the
discount of the agent's average purchase price against the daily average
with a quadratic penalty for straying from buying on half of the days.
"""

from __future__ import annotations

import enum
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import metrics
from .errors import InstanceTooLarge

BRUTE_FORCE_MAX_GENES = 24


class CrossoverType(str, enum.Enum):
    UNIFORM = "uniform"
    ONE_POINT = "one_point"
    TWO_POINT = "two_point"


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 100
    crossover_probability: float = 0.4
    mutation_probability: float = 0.2
    elite_ratio: float = 0.3
    parents_portion: float = 0.3
    max_iterations: int = 200
    no_improvement_stop: int = 30
    crossover_type: CrossoverType = CrossoverType.UNIFORM

    def __post_init__(self):
        object.__setattr__(self, "crossover_type", CrossoverType(self.crossover_type))
        for name in ("crossover_probability", "mutation_probability", "elite_ratio", "parents_portion"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.elite_ratio > self.parents_portion:
            raise ValueError("elite_ratio must not exceed parents_portion")
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if self.max_iterations < 0 or self.no_improvement_stop < 1:
            raise ValueError("iteration limits must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["crossover_type"] = self.crossover_type.value
        return d


@dataclass(frozen=True)
class SolvedEpisode:
    episode_id: int
    genes: tuple[int, ...]
    loss: float
    return_over_daily: float
    purchase_count: int
    iterations_used: int

    def to_record(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "genes": list(self.genes),
            "loss": self.loss,
            "return_over_daily": self.return_over_daily,
            "purchase_count": self.purchase_count,
            "iterations_used": self.iterations_used,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "SolvedEpisode":
        return cls(
            int(rec["episode_id"]),
            tuple(int(g) for g in rec["genes"]),
            float(rec["loss"]),
            float(rec["return_over_daily"]),
            int(rec["purchase_count"]),
            int(rec["iterations_used"]),
        )


@dataclass
class SolvedEpisodeSet:
    items: list[SolvedEpisode]
    wall_seconds: float = 0.0
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def episodes_per_hour(self) -> float:
        if self.wall_seconds <= 0:
            return float("inf")
        return len(self.items) / (self.wall_seconds / 3600.0)

    def by_id(self) -> dict[int, SolvedEpisode]:
        return {s.episode_id: s for s in self.items}

    def purchase_counts(self) -> np.ndarray:
        return np.array([s.purchase_count for s in self.items])

    def summary(self) -> dict:
        counts = self.purchase_counts()
        return {
            "summary": True,
            "episodes": len(self.items),
            "mean_loss": float(np.mean([s.loss for s in self.items])) if self.items else None,
            "mean_purchase_count": float(counts.mean()) if self.items else None,
            "mean_return_over_daily": float(np.mean([s.return_over_daily for s in self.items]))
            if self.items
            else None,
            "config": self.config,
        }

    def write(self, path, timing: bool = False) -> None:
        """One JSON line per episode, then a summary line.

        Wall-clock figures are left out unless ``timing`` is set, so that
        identical runs write identical bytes.
        """
        summary = self.summary()
        if timing:
            summary["wall_seconds"] = self.wall_seconds
            summary["episodes_per_hour"] = self.episodes_per_hour
        with open(path, "w", encoding="utf-8") as fh:
            for s in self.items:
                fh.write(json.dumps(s.to_record()) + "\n")
            fh.write(json.dumps(summary) + "\n")

    @classmethod
    def read(cls, path) -> "SolvedEpisodeSet":
        items, summary = [], {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec.get("summary"):
                    summary = rec
                else:
                    items.append(SolvedEpisode.from_record(rec))
        return cls(items, summary.get("wall_seconds", 0.0), summary.get("config", {}))


def episode_loss(raw_prices, actions, target_count: float | None = None) -> float:
    """Loss of one action vector on one episode's raw prices.

    ``((agent_avg - p_mean) / p_mean) * 2N + (1 - N / target)^2`` with N the
    number of buy-twice days. With N = 0 the first term is taken as 0, and
    with every day bought it is exactly 0 (the agent pays the daily average),
    so neither case picks up rounding noise. ``target_count`` defaults to
    half the episode length.
    """
    p = np.asarray(raw_prices, dtype=float)
    a = np.asarray(actions)
    if p.shape != a.shape:
        raise ValueError(f"prices {p.shape} and actions {a.shape} differ in shape")
    if target_count is None:
        target_count = p.size / 2
    n = int(a.sum())
    p_mean = p.mean()
    if n == 0 or n == p.size:
        first = 0.0
    else:
        agent_avg = float(p @ a) / n
        first = (agent_avg - p_mean) / p_mean * (2 * n)
    return float(first + (1.0 - n / target_count) ** 2)


def population_loss(raw_prices, population, target_count: float | None = None) -> np.ndarray:
    """Vectorised loss over the rows of a 0/1 matrix.

    Uses ``2 * (p.a - N * p_mean) / p_mean``, which equals the first
    loss term and is already 0 when N = 0.
    """
    p = np.asarray(raw_prices, dtype=float)
    pop = np.asarray(population)
    if target_count is None:
        target_count = p.size / 2
    n = pop.sum(axis=1)
    p_mean = p.mean()
    first = 2.0 * (pop @ p - n * p_mean) / p_mean
    first = np.where(n == p.size, 0.0, first)
    return first + (1.0 - n / target_count) ** 2


def int_to_genes(k: int, length: int) -> np.ndarray:
    """Genes of ``k`` with the first gene as the most significant bit."""
    shifts = np.arange(length - 1, -1, -1)
    return ((k >> shifts) & 1).astype(np.int8)


def brute_force_solve(raw_prices, target_count: float | None = None):
    """Exhaustive minimiser for short episodes.

    Ties (within 1e-12) go to the smallest gene string read as a binary
    integer. Returns ``(genes, loss)``.
    """
    p = np.asarray(raw_prices, dtype=float)
    L = p.size
    if L > BRUTE_FORCE_MAX_GENES:
        raise InstanceTooLarge(f"{L} genes exceeds the {BRUTE_FORCE_MAX_GENES}-gene enumeration limit")
    total = 1 << L
    shifts = np.arange(L - 1, -1, -1, dtype=np.int64)
    losses = np.empty(total)
    chunk = 1 << 16
    for lo in range(0, total, chunk):
        k = np.arange(lo, min(lo + chunk, total), dtype=np.int64)
        bits = ((k[:, None] >> shifts) & 1).astype(np.float64)
        losses[lo : lo + len(k)] = population_loss(p, bits, target_count)
    best = int(np.flatnonzero(losses <= losses.min() + 1e-12)[0])
    genes = int_to_genes(best, L)
    return genes, episode_loss(p, genes, target_count)


def _crossover(parent_a, parent_b, kind: CrossoverType, rng) -> np.ndarray:
    n, L = parent_a.shape
    if kind is CrossoverType.UNIFORM:
        take_b = rng.random((n, L)) < 0.5
    elif kind is CrossoverType.ONE_POINT:
        cut = rng.integers(1, L, size=n) if L > 1 else np.ones(n, dtype=int)
        take_b = np.arange(L)[None, :] >= cut[:, None]
    else:
        cuts = np.sort(rng.integers(1, max(L, 2), size=(n, 2)), axis=1)
        pos = np.arange(L)[None, :]
        take_b = (pos >= cuts[:, :1]) & (pos < cuts[:, 1:])
    return np.where(take_b, parent_b, parent_a)


@dataclass
class GaResult:
    genes: np.ndarray
    loss: float
    iterations: int
    best_history: list[float]


def run_ga(raw_prices, config: GaConfig = GaConfig(), rng_seed=0, target_count=None) -> GaResult:
    """Minimise the episode loss over binary action vectors.

    Each generation keeps the best ``ceil(elite_ratio * pop)`` vectors
    unchanged and breeds the rest from the best ``ceil(parents_portion *
    pop)``. Parents are drawn by roulette wheel on
    ``(worst_loss - loss) + 1e-9``; a child is a crossover of two parents
    with probability ``crossover_probability``, otherwise a copy of the
    first. Every child gene is then replaced by a random bit with
    probability ``mutation_probability``.
    """
    p = np.asarray(raw_prices, dtype=float)
    L = p.size
    rng = np.random.default_rng(rng_seed)
    P = config.population_size
    n_elite = min(P - 1, math.ceil(config.elite_ratio * P))
    n_par = max(1, min(P, math.ceil(config.parents_portion * P)))
    n_child = P - n_elite

    pop = rng.integers(0, 2, size=(P, L), dtype=np.int8)
    loss = population_loss(p, pop, target_count)
    best = float(loss.min())
    history = [best]
    stall = 0
    it = 0
    while it < config.max_iterations and stall < config.no_improvement_stop:
        order = np.argsort(loss, kind="stable")
        pop, loss = pop[order], loss[order]
        parents, parent_loss = pop[:n_par], loss[:n_par]
        fitness = (loss[-1] - parent_loss) + 1e-9
        probs = fitness / fitness.sum()
        ia = rng.choice(n_par, size=n_child, p=probs)
        ib = rng.choice(n_par, size=n_child, p=probs)
        children = parents[ia].copy()
        cross = rng.random(n_child) < config.crossover_probability
        if cross.any():
            children[cross] = _crossover(
                parents[ia[cross]], parents[ib[cross]], config.crossover_type, rng
            )
        mutate = rng.random((n_child, L)) < config.mutation_probability
        children[mutate] = rng.integers(0, 2, size=int(mutate.sum()), dtype=np.int8)

        pop = np.concatenate([pop[:n_elite], children])
        loss = np.concatenate([loss[:n_elite], population_loss(p, children, target_count)])
        it += 1
        gen_best = float(loss.min())
        if gen_best < best:
            best = gen_best
            stall = 0
        else:
            stall += 1
        history.append(min(best, gen_best))
    i = int(np.argmin(loss))
    genes = pop[i].copy()
    return GaResult(genes, episode_loss(p, genes, target_count), it, history)


def _solved(raw, eid, config, seed) -> SolvedEpisode:
    res = run_ga(raw, config, seed)
    return SolvedEpisode(
        episode_id=int(eid),
        genes=tuple(int(g) for g in res.genes),
        loss=res.loss,
        return_over_daily=metrics.rod(raw, res.genes),
        purchase_count=int(res.genes.sum()),
        iterations_used=res.iterations,
    )


def solve_episode(episode, config: GaConfig = GaConfig(), rng_seed=0) -> SolvedEpisode:
    """Solve one episode (an ``Episode`` or a bare raw price vector)."""
    raw = np.asarray(getattr(episode, "raw_prices", episode), dtype=float)
    return _solved(raw, getattr(episode, "id", 0), config, rng_seed)


def episode_seed(master_seed: int, episode_id: int) -> int:
    """Seed for one episode, a function of the master seed and id only."""
    ss = np.random.SeedSequence([int(master_seed), int(episode_id)])
    return int(ss.generate_state(1, np.uint64)[0])


def _solve_job(args):
    raw, eid, seed, config = args
    return _solved(raw, eid, config, seed)


def solve_all(
    episodes: Sequence,
    config: GaConfig = GaConfig(),
    master_seed: int = 0,
    parallelism: int = 1,
) -> SolvedEpisodeSet:
    """Solve every episode; output is independent of order and worker count."""
    if not episodes:
        raise ValueError("no episodes to solve")
    jobs = [
        (np.asarray(ep.raw_prices, dtype=float), ep.id, episode_seed(master_seed, ep.id), config)
        for ep in episodes
    ]
    t0 = time.perf_counter()
    if parallelism <= 1:
        items = [_solve_job(j) for j in jobs]
    else:
        chunksize = max(1, len(jobs) // (parallelism * 8))
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            items = list(pool.map(_solve_job, jobs, chunksize=chunksize))
    wall = time.perf_counter() - t0
    return SolvedEpisodeSet(items, wall, {"ga": config.to_dict(), "master_seed": master_seed})


def with_overrides(config: GaConfig, **changes) -> GaConfig:
    return replace(config, **changes)
