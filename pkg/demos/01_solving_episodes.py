# %% [markdown]
# # Solving one 30-day episode
#
# An episode is 30 decision days scaled on the 30 days before them. Each day
# the agent either buys two units or skips. The loss rewards buying below the
# window's daily average and keeps the number of buy days near 15.

# %%
import numpy as np

from gadle.episodes import build_episode, window_at
from gadle.gasolver import GaConfig, episode_loss, run_ga, solve_all
from gadle.ingest import DailyPriceMode, load_price_csv
from gadle.metrics import pcod, rod
from gadle.synth import sample_csv_path

series = load_price_csv(sample_csv_path())
episode = build_episode(window_at(series, 17, DailyPriceMode.OHLC4), 0)
print(len(series), "bars;", "episode starts", episode.start_date)
print(np.round(episode.raw_prices[:6], 3), "...")

# %% [markdown]
# The two extremes both cost exactly 1: never buying leaves the count term at
# its maximum, buying every day pays the daily average.

# %%
p = episode.raw_prices
print("never:", episode_loss(p, np.zeros(30)), " always:", episode_loss(p, np.ones(30)))

# %% [markdown]
# The genetic algorithm (population 100, uniform crossover) usually lands on
# the exact optimum. For this loss that optimum is simply the N cheapest days
# for the best N, which gives an easy check.

# %%
res = run_ga(p, GaConfig(), rng_seed=0)
order = np.sort(p)
exact = min((2 * (order[:n].sum() - n * p.mean()) / p.mean() if n else 0.0) + (1 - n / 15) ** 2
            for n in range(31))
print(f"GA loss {res.loss:.6f} after {res.iterations} generations; exact optimum {exact:.6f}")
print("genes", "".join(map(str, res.genes)), " RoD %.2f%%  PCoD %+d" % (rod(p, res.genes), pcod(res.genes)))

# %% [markdown]
# Solving many episodes is seeded per episode, so the result does not depend
# on order or on the number of worker processes.

# %%
from gadle.episodes import build_episodes, sample_windows

eps = build_episodes(sample_windows(series, count=40, rng_seed=1))
solved = solve_all(eps, master_seed=0)
counts = solved.purchase_counts()
print("mean purchase count %.2f, range %d..%d" % (np.mean(counts), min(counts), max(counts)))
