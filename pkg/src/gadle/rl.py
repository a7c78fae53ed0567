"""Episodic buy-twice-or-skip environment and the DQN / actor-critic baselines.

The episode is replayed one day at a time. The state is the day's episode
features plus the running buy ratio; the only reward is the negated episode
loss, paid on the last day. Both agents use the same dense network shape as
the distilled policy, with a different output layer.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .episodes import Episode
from .errors import EmptyBuffer, NonFiniteLoss, StepAfterTerminal
from .evaluate import BacktestReport, WindowResult, aggregate, period_label
from .gasolver import episode_loss
from .neural import DEFAULT_HIDDEN, N_INPUTS, Mlp

ACTIONS = (0, 2)  # head index -> units bought that day
TERMINAL = None


# -- environment --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EnvState:
    episode: Episode
    t: int  # 1-based decision day
    genes: tuple = ()

    @property
    def episode_progress(self) -> float:
        return self.t / len(self.episode)

    @property
    def buy_ratio(self) -> float:
        return sum(self.genes) / (self.t - 1) if self.t > 1 else 0.0

    @property
    def features(self) -> np.ndarray:
        return self.episode.features[self.t - 1]

    def vector(self) -> np.ndarray:
        return np.append(self.features, self.buy_ratio)


def env_reset(episode: Episode) -> EnvState:
    return EnvState(episode, 1, ())


def env_step(state: EnvState | None, action: int):
    """Advance one day. Returns ``(next_state, reward)``; ``next_state`` is
    :data:`TERMINAL` after the last day, whose reward is ``-episode_loss``.
    """
    if state is TERMINAL or state.t > len(state.episode):
        raise StepAfterTerminal("episode already finished")
    if action not in ACTIONS:
        raise ValueError(f"action must be one of {ACTIONS}, got {action!r}")
    genes = state.genes + (1 if action == 2 else 0,)
    if state.t == len(state.episode):
        return TERMINAL, -episode_loss(state.episode.raw_prices, np.array(genes))
    return EnvState(state.episode, state.t + 1, genes), 0.0


class InvestmentEnv:
    """Stateful wrapper over :func:`env_reset` / :func:`env_step`."""

    def __init__(self, episode: Episode):
        self.episode = episode
        self.state = None
        self.genes: tuple = ()
        self.done = True

    def reset(self) -> np.ndarray:
        self.state = env_reset(self.episode)
        self.genes = ()
        self.done = False
        return self.state.vector()

    def step(self, action: int):
        if self.done:
            raise StepAfterTerminal("call reset() first")
        prev = self.state
        self.state, reward = env_step(prev, action)
        self.genes = prev.genes + (1 if action == 2 else 0,)
        self.done = self.state is TERMINAL
        obs = None if self.done else self.state.vector()
        return obs, reward, self.done


# -- replay buffer ------------------------------------------------------------


@dataclass
class Transition:
    state: np.ndarray
    action: int  # head index, 0 = skip, 1 = buy twice
    reward: float
    next_state: np.ndarray | None
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring buffer with reward-aware sampling.

    Transitions with a nonzero reward get weight 1 and all others weight
    ``unusual_sampling_factor``: 1 gives uniform sampling, 0 samples only
    rewarded transitions (uniformly, if none are stored yet).
    """

    def __init__(self, capacity: int = 7500, unusual_sampling_factor: float = 0.9, width: int = N_INPUTS):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        if not 0.0 <= unusual_sampling_factor <= 1.0:
            raise ValueError("unusual_sampling_factor must lie in [0, 1]")
        self.capacity = capacity
        self.u = unusual_sampling_factor
        self.states = np.zeros((capacity, width))
        self.next_states = np.zeros((capacity, width))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self._next = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, tr: Transition) -> None:
        i = self._next
        self.states[i] = tr.state
        self.next_states[i] = 0.0 if tr.next_state is None else tr.next_state
        self.actions[i] = tr.action
        self.rewards[i] = tr.reward
        self.dones[i] = tr.done
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def weights(self) -> np.ndarray:
        w = np.where(self.rewards[: self.size] != 0.0, 1.0, self.u)
        total = w.sum()
        if total == 0.0:
            return np.full(self.size, 1.0 / self.size)
        return w / total

    def sample_indices(self, batch_size: int, rng) -> np.ndarray:
        if self.size == 0:
            raise EmptyBuffer("cannot sample from an empty buffer")
        return rng.choice(self.size, size=batch_size, replace=True, p=self.weights())

    def sample(self, batch_size: int, rng):
        i = self.sample_indices(batch_size, rng)
        return self.states[i], self.actions[i], self.rewards[i], self.next_states[i], self.dones[i]


def replay_push(buffer: ReplayBuffer, tr: Transition) -> None:
    buffer.push(tr)


def replay_sample(buffer: ReplayBuffer, batch_size: int, rng):
    return buffer.sample(batch_size, rng)


# -- schedules and optimiser --------------------------------------------------


def epsilon_at(n: int, start: float = 1.0, minimum: float = 0.01, decay: float = 0.999) -> float:
    """Exploration rate after ``n`` finished episodes."""
    return max(minimum, start * decay**n)


def learning_rate_at(step: int, initial: float = 0.001, decay_steps: int = 1000,
                     decay_rate: float = 0.99, staircase: bool = True) -> float:
    p = step / decay_steps
    return initial * decay_rate ** (math.floor(p) if staircase else p)


class Adam:
    def __init__(self, params: Sequence[np.ndarray], beta1=0.9, beta2=0.999, eps=1e-7):
        self.params = list(params)
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.steps = 0

    def step(self, grads, lr: float) -> None:
        self.steps += 1
        c1 = 1.0 - self.b1**self.steps
        c2 = 1.0 - self.b2**self.steps
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- curves -------------------------------------------------------------------


@dataclass
class TrainingCurves:
    running_reward: list = field(default_factory=list)
    buy_ratio: list = field(default_factory=list)
    episode_reward: list = field(default_factory=list)

    def __len__(self):
        return len(self.buy_ratio)

    def record(self, reward: float, buy_ratio: float, smoothing: float = 0.05) -> None:
        prev = self.running_reward[-1] if self.running_reward else 0.0
        self.running_reward.append(smoothing * reward + (1.0 - smoothing) * prev)
        self.buy_ratio.append(buy_ratio)
        self.episode_reward.append(reward)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode", "running_reward", "buy_ratio"])
            for i, (r, b) in enumerate(zip(self.running_reward, self.buy_ratio), start=1):
                w.writerow([i, repr(r), repr(b)])

    @classmethod
    def read_csv(cls, path) -> "TrainingCurves":
        out = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                out.running_reward.append(float(row["running_reward"]))
                out.buy_ratio.append(float(row["buy_ratio"]))
        return out


@dataclass(frozen=True)
class FailVerdict:
    failed: bool
    reason: str = ""

    def __bool__(self):
        return self.failed


def detect_failed_run(curves: TrainingCurves, low=0.05, high=0.95) -> FailVerdict:
    """A run fails when it ends up (almost) never or always buying, or when
    its running reward trends down over the second half of training.
    """
    br = np.asarray(curves.buy_ratio, dtype=float)
    rr = np.asarray(curves.running_reward, dtype=float)
    if br.size == 0:
        raise ValueError("empty training curves")
    tail = br[-max(1, br.size // 4):].mean()
    if tail < low:
        return FailVerdict(True, f"final buy ratio {tail:.3f} < {low}")
    if tail > high:
        return FailVerdict(True, f"final buy ratio {tail:.3f} > {high}")
    half = rr[rr.size // 2:]
    if half.size >= 2:
        slope = np.polyfit(np.arange(half.size, dtype=float), half, 1)[0]
        if slope < 0:
            return FailVerdict(True, f"running reward slope {slope:.3g} < 0 over final half")
    return FailVerdict(False, "")


# -- agents -------------------------------------------------------------------


@dataclass(frozen=True)
class DqnConfig:
    episodes: int = 1440
    learning_rate: float = 0.001
    lr_decay_steps: int = 1000
    lr_decay_rate: float = 0.99
    lr_staircase: bool = True
    epsilon: float = 1.0
    epsilon_min: float = 0.01
    epsilon_decay: float = 0.999
    discount: float = 0.95
    batch_size: int = 32
    target_sync: int = 2
    buffer_capacity: int = 7500
    unusual_sampling_factor: float = 0.9
    hidden: tuple = DEFAULT_HIDDEN

    def __post_init__(self):
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if not 0.0 <= self.epsilon_min <= self.epsilon <= 1.0:
            raise ValueError("need 0 <= epsilon_min <= epsilon <= 1")
        if not 0.0 < self.epsilon_decay <= 1.0 or not 0.0 < self.lr_decay_rate <= 1.0:
            raise ValueError("decay rates must lie in (0, 1]")
        if min(self.episodes, self.batch_size, self.target_sync, self.lr_decay_steps) < 1:
            raise ValueError("counts must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass(frozen=True)
class A2cConfig:
    episodes: int = 288_000
    learning_rate: float = 0.001
    lr_decay_steps: int = 1000
    lr_decay_rate: float = 0.99
    lr_staircase: bool = True
    epsilon: float = 1.0
    epsilon_min: float = 0.01
    epsilon_decay: float = 0.999
    discount: float = 0.97
    running_reward_smoothing: float = 0.05
    hidden: tuple = DEFAULT_HIDDEN

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if not 0.0 <= self.epsilon_min <= self.epsilon <= 1.0:
            raise ValueError("need 0 <= epsilon_min <= epsilon <= 1")
        if not 0.0 < self.epsilon_decay <= 1.0 or not 0.0 < self.lr_decay_rate <= 1.0:
            raise ValueError("decay rates must lie in (0, 1]")
        if self.episodes < 1 or self.lr_decay_steps < 1:
            raise ValueError("counts must be positive")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class Agent:
    """Greedy wrapper around a trained network; head 0 = skip, head 1 = buy twice."""

    kind = "agent"

    def __init__(self, net: Mlp, config):
        self.net = net
        self.config = config

    def scores(self, x) -> np.ndarray:
        return self.net(x)[:, :2]

    def act(self, state_vector) -> int:
        return int(np.argmax(self.scores(state_vector)[0]))

    def save(self, path, extra: dict | None = None) -> None:
        d = self.net.to_dict()
        d["agent"] = self.kind
        d["config"] = self.config.to_dict()
        d.update(extra or {})
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(d, fh)

    @staticmethod
    def load(path) -> "Agent":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        net = Mlp.from_dict(d)
        cfg = dict(d["config"])
        cfg["hidden"] = tuple(cfg["hidden"])
        if d.get("agent") == "dqn":
            return DqnAgent(net, DqnConfig(**cfg))
        return A2cAgent(net, A2cConfig(**cfg))


class DqnAgent(Agent):
    kind = "dqn"


class A2cAgent(Agent):
    kind = "a2c"


def train_dqn(episodes: Sequence[Episode], config: DqnConfig = DqnConfig(), rng_seed=0):
    """Deep Q-learning with a target network and reward-weighted replay.

    One gradient step per environment step once the buffer holds a batch.
    Returns ``(agent, curves)``.
    """
    if not episodes:
        raise ValueError("no episodes to train on")
    rng = np.random.default_rng(rng_seed)
    q = Mlp((N_INPUTS, *config.hidden, 2), "linear", seed=rng.integers(2**63))
    target = q.copy()
    opt = Adam(q.params())
    buf = ReplayBuffer(config.buffer_capacity, config.unusual_sampling_factor)
    curves = TrainingCurves()
    for n in range(config.episodes):
        eps = epsilon_at(n, config.epsilon, config.epsilon_min, config.epsilon_decay)
        env = InvestmentEnv(episodes[int(rng.integers(len(episodes)))])
        obs = env.reset()
        total = 0.0
        done = False
        while not done:
            if rng.random() < eps:
                a = int(rng.integers(2))
            else:
                a = int(np.argmax(q(obs)[0]))
            nxt, reward, done = env.step(ACTIONS[a])
            total += reward
            buf.push(Transition(obs, a, reward, nxt, done))
            obs = nxt
            if len(buf) >= config.batch_size:
                s, act, r, s2, d = buf.sample(config.batch_size, rng)
                y = r + config.discount * (~d) * target(s2).max(axis=1)
                out, acts = q.logits(s, keep=True)
                rows = np.arange(len(act))
                err = out[rows, act] - y
                loss = float(np.mean(err**2))
                if not math.isfinite(loss):
                    raise NonFiniteLoss(n + 1, "DQN temporal-difference loss")
                d_out = np.zeros_like(out)
                d_out[rows, act] = 2.0 * err / len(act)
                lr = learning_rate_at(opt.steps, config.learning_rate, config.lr_decay_steps,
                                      config.lr_decay_rate, config.lr_staircase)
                opt.step(q.backward(acts, d_out), lr)
        curves.record(total, float(np.mean(env.genes)))
        if (n + 1) % config.target_sync == 0:
            target.load_params(q)
    return DqnAgent(q, config), curves


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def normalize_returns(returns, eps: float = 1e-8) -> np.ndarray:
    r = np.asarray(returns, dtype=float)
    return (r - r.mean()) / (r.std() + eps)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def huber_grad(x, delta: float = 1.0):
    return np.clip(x, -delta, delta)


def huber(x, delta: float = 1.0):
    a = np.abs(x)
    return np.where(a <= delta, 0.5 * x * x, delta * (a - 0.5 * delta))


def train_a2c(episodes: Sequence[Episode], config: A2cConfig = A2cConfig(), rng_seed=0):
    """Advantage actor-critic with a shared backbone and epsilon-gated sampling.

    With probability epsilon the action is sampled from the actor's
    distribution, otherwise the most probable action is taken. After each
    episode the rewards are replaced by normalised discounted returns and
    one gradient step is taken on actor loss ``-log_prob * advantage`` plus
    critic Huber loss. Returns ``(agent, curves)``.
    """
    if not episodes:
        raise ValueError("no episodes to train on")
    rng = np.random.default_rng(rng_seed)
    net = Mlp((N_INPUTS, *config.hidden, 3), "linear", seed=rng.integers(2**63))
    opt = Adam(net.params())
    curves = TrainingCurves()
    for n in range(config.episodes):
        eps = epsilon_at(n, config.epsilon, config.epsilon_min, config.epsilon_decay)
        env = InvestmentEnv(episodes[int(rng.integers(len(episodes)))])
        obs = env.reset()
        states, actions, rewards = [], [], []
        done = False
        while not done:
            probs = _softmax(net(obs)[0, :2])
            if rng.random() < eps:
                a = int(rng.random() < probs[1])
            else:
                a = int(np.argmax(probs))
            states.append(obs)
            actions.append(a)
            obs, reward, done = env.step(ACTIONS[a])
            rewards.append(reward)
        total = float(sum(rewards))
        curves.record(total, float(np.mean(env.genes)), config.running_reward_smoothing)

        returns = normalize_returns(discounted_returns(rewards, config.discount))
        out, acts = net.logits(np.array(states), keep=True)
        probs = _softmax(out[:, :2])
        values = out[:, 2]
        adv = returns - values
        onehot = np.eye(2)[actions]
        loss = float(-np.sum(np.log(probs[np.arange(len(actions)), actions] + 1e-12) * adv)
                     + np.sum(huber(values - returns)))
        if not math.isfinite(loss):
            raise NonFiniteLoss(n + 1, "actor-critic loss")
        d_out = np.zeros_like(out)
        d_out[:, :2] = -adv[:, None] * (onehot - probs)
        d_out[:, 2] = huber_grad(values - returns)
        lr = learning_rate_at(opt.steps, config.learning_rate, config.lr_decay_steps,
                              config.lr_decay_rate, config.lr_staircase)
        opt.step(net.backward(acts, d_out), lr)
    return A2cAgent(net, config), curves


def rollout(agent: Agent, episode: Episode) -> np.ndarray:
    """Greedy (epsilon 0) pass through one episode; returns the 0/1 genes."""
    env = InvestmentEnv(episode)
    obs = env.reset()
    done = False
    while not done:
        obs, _, done = env.step(ACTIONS[agent.act(obs)])
    return np.array(env.genes, dtype=np.int8)


def evaluate_agent(agent: Agent, episodes: Sequence[Episode]):
    """Greedy actions per episode and their RoD/PCoD summary."""
    genes = [rollout(agent, ep) for ep in episodes]
    rows = [WindowResult.from_prices(ep.raw_prices, g, period_label(ep)) for ep, g in zip(episodes, genes)]
    return genes, BacktestReport(rows, aggregate(rows))
