# %% [markdown]
# # Reinforcement-learning baselines
#
# The same episodes become an environment: the state is the day's features
# plus the running buy ratio, and the only reward is the negated episode loss
# on the last day. Both agents here run for a short budget only.

# %%
import datetime as dt

import numpy as np

from gadle.episodes import build_episodes, sample_windows
from gadle.rl import A2cConfig, DqnConfig, detect_failed_run, evaluate_agent, train_a2c, train_dqn
from gadle.synth import geometric_walk

series = geometric_walk(seed=7, start=dt.date(2010, 1, 4), end=dt.date(2019, 12, 31))
episodes = build_episodes(sample_windows(series, count=200, rng_seed=0))

# %%
dqn, dqn_curves = train_dqn(episodes, DqnConfig(episodes=60), rng_seed=0)
a2c, a2c_curves = train_a2c(episodes, A2cConfig(episodes=2000), rng_seed=0)
for name, curves in (("DQN", dqn_curves), ("A2C", a2c_curves)):
    br = np.asarray(curves.buy_ratio)
    print(f"{name}: buy ratio first {br[:20].mean():.2f} -> last {br[-20:].mean():.2f};",
          "verdict:", detect_failed_run(curves).reason or "ok")

# %% [markdown]
# A run whose agent ends up never or always buying counts as failed in the
# consistency harness and is left out of its statistics.

# %%
_, report = evaluate_agent(a2c, episodes[:20])
print("A2C on 20 training episodes: RoD %.2f%%, PCoD %d" % (report.overall.rod, report.overall.pcod))
