# %% [markdown]
# # Distilling GA solutions into a policy network
#
# Every solved day becomes one training row: the six price features plus the
# fraction of earlier days the optimal plan bought on. The network learns
# the optimal action for that row. At inference it feeds back its own
# decisions, so the buy ratio it sees is the one it produced.

# %%
import datetime as dt

import numpy as np

from gadle.episodes import build_episodes, sample_windows
from gadle.gasolver import solve_all
from gadle.neural import (DEFAULT_TEST_FRACTION, FitConfig, episodes_to_dataset, evaluate_rows, fit,
                          make_policy, predict_many)
from gadle.synth import geometric_walk

series = geometric_walk(seed=2020, start=dt.date(2000, 1, 3), end=dt.date(2019, 12, 31))
episodes = build_episodes(sample_windows(series, count=600, rng_seed=0))
solved = solve_all(episodes, master_seed=0)
data = episodes_to_dataset(solved, episodes, split_seed=0, test_size=DEFAULT_TEST_FRACTION)
print(len(data.train), "train rows,", len(data.validation), "validation rows,", len(data.test), "test rows")

# %%
res = fit(make_policy(seed=0), data, FitConfig(epochs=80))
loss, acc = evaluate_rows(res.policy, data.test)
print(f"best epoch {res.best_epoch}; test loss {loss:.3f}, accuracy {acc:.3f}")

# %% [markdown]
# Row accuracy uses the optimal history as input. The rollout below uses the
# policy's own history instead, and compares buy counts per episode. Small
# per-row errors compound through the fed-back ratio, so the rollout count
# can sit well away from the optimal one even at high row accuracy.

# %%
by_id = {ep.id: ep for ep in episodes}
test_eps = [by_id[i] for i in data.split.test]
genes = predict_many(res.policy, test_eps)
optimal = {s.episode_id: s.purchase_count for s in solved}
print("policy mean count %.2f vs optimal %.2f" % (genes.sum(axis=1).mean(),
                                                  np.mean([optimal[ep.id] for ep in test_eps])))
