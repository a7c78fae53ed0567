from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import random_episodes
from gadle.errors import EmptyBuffer, StepAfterTerminal
from gadle.gasolver import episode_loss, solve_episode
from gadle.rl import (
    TERMINAL,
    A2cConfig,
    Agent,
    DqnConfig,
    InvestmentEnv,
    ReplayBuffer,
    TrainingCurves,
    Transition,
    detect_failed_run,
    discounted_returns,
    env_reset,
    env_step,
    epsilon_at,
    evaluate_agent,
    learning_rate_at,
    normalize_returns,
    replay_sample,
    rollout,
    train_a2c,
    train_dqn,
)


@pytest.fixture(scope="module")
def episodes():
    return random_episodes(6, seed=21)


def play(episode, actions):
    state, total = env_reset(episode), 0.0
    for a in actions:
        state, r = env_step(state, a)
        total += r
    return state, total


# -- environment ---------------------------------------------------------------


def test_reset_state(episodes):
    s = env_reset(episodes[0])
    assert s.t == 1 and s.episode_progress == pytest.approx(1 / 30) and s.buy_ratio == 0.0
    np.testing.assert_array_equal(s.features, episodes[0].features[0])
    assert np.array_equal(env_reset(episodes[0]).vector(), s.vector())


def test_reward_only_on_last_day(episodes):
    state = env_reset(episodes[0])
    for t in range(29):
        state, r = env_step(state, 2 if t % 3 == 0 else 0)
        assert r == 0.0 and state.t == t + 2
    assert state.buy_ratio == pytest.approx(10 / 29)
    end, r = env_step(state, 0)
    assert end is TERMINAL and r != 0.0
    with pytest.raises(StepAfterTerminal):
        env_step(end, 0)


def test_constant_sequences_pay_minus_one(episodes):
    assert play(episodes[1], [2] * 30)[1] == -1.0
    assert play(episodes[1], [0] * 30)[1] == -1.0


def test_invalid_action(episodes):
    with pytest.raises(ValueError):
        env_step(env_reset(episodes[0]), 1)


def test_wrapper_refuses_steps_after_the_end(episodes):
    env = InvestmentEnv(episodes[0])
    env.reset()
    done = False
    while not done:
        _, _, done = env.step(0)
    with pytest.raises(StepAfterTerminal):
        env.step(0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**20))
def test_reward_equals_negated_loss(seed, episodes):
    rng = np.random.default_rng(seed)
    ep = episodes[seed % len(episodes)]
    genes = rng.integers(0, 2, 30)
    _, total = play(ep, [2 * g for g in genes])
    assert total == -episode_loss(ep.raw_prices, genes)


# -- replay --------------------------------------------------------------------


def terminal_buffer(zeros, u):
    buf = ReplayBuffer(capacity=50, unusual_sampling_factor=u)
    for i in range(zeros):
        buf.push(Transition(np.full(7, i), 0, 0.0, np.zeros(7), False))
    buf.push(Transition(np.full(7, -1.0), 1, -0.4, None, True))
    return buf


def test_empty_buffer():
    with pytest.raises(EmptyBuffer):
        replay_sample(ReplayBuffer(), 4, np.random.default_rng(0))


def test_zero_factor_returns_only_rewarded_transitions():
    _, _, r, _, d = replay_sample(terminal_buffer(10, 0.0), 500, np.random.default_rng(0))
    assert np.all(r == -0.4) and np.all(d)


def test_zero_factor_without_rewards_falls_back_to_uniform():
    buf = ReplayBuffer(capacity=5, unusual_sampling_factor=0.0)
    for _ in range(3):
        buf.push(Transition(np.zeros(7), 0, 0.0, np.zeros(7), False))
    assert buf.weights().tolist() == pytest.approx([1 / 3] * 3)


def test_unit_factor_is_uniform_by_chi_square():
    buf = terminal_buffer(10, 1.0)
    idx = buf.sample_indices(100_000, np.random.default_rng(1))
    counts = np.bincount(idx, minlength=11)
    assert stats.chisquare(counts).pvalue > 1e-3


@pytest.mark.parametrize("zeros", [9, 10])
def test_terminal_probability_closed_form(zeros):
    u = 0.9
    expected = 1 / (1 + zeros * u)
    buf = terminal_buffer(zeros, u)
    assert buf.weights()[-1] == pytest.approx(expected, rel=1e-12)
    n = 100_000
    hits = np.sum(buf.sample_indices(n, np.random.default_rng(2)) == zeros)
    assert abs(hits / n - expected) <= 3 * math.sqrt(expected * (1 - expected) / n)


def test_ring_evicts_oldest():
    buf = ReplayBuffer(capacity=3)
    for i in range(5):
        buf.push(Transition(np.full(7, float(i)), 0, 0.0, None, False))
    assert len(buf) == 3 and sorted(buf.states[:, 0]) == [2.0, 3.0, 4.0]


# -- schedules and returns ---------------------------------------------------------


def test_schedules():
    assert epsilon_at(0) == 1.0
    assert epsilon_at(1000) == pytest.approx(0.999**1000)
    assert epsilon_at(10**6) == 0.01
    assert learning_rate_at(999) == 0.001
    assert learning_rate_at(1000) == pytest.approx(0.00099)
    assert learning_rate_at(1500, staircase=False) == pytest.approx(0.001 * 0.99**1.5)


def test_discount_limits():
    assert discounted_returns([0.0, -0.7], 0.0).tolist() == [0.0, -0.7]
    assert discounted_returns([1.0, 1.0, 1.0], 0.5).tolist() == [1.75, 1.5, 1.0]


@settings(max_examples=60, deadline=None)
@given(xs=st.lists(st.floats(-10, 10), min_size=2, max_size=30).filter(lambda v: np.std(v) > 1e-3))
def test_normalised_returns_are_standardised(xs):
    z = normalize_returns(xs)
    assert abs(z.mean()) < 1e-9 and z.std() == pytest.approx(1.0, rel=1e-6)


# -- failure detection ----------------------------------------------------------------


def curves_from(buy, reward):
    c = TrainingCurves()
    for b, r in zip(buy, reward):
        c.record(r, b)
    return c


def test_failure_verdicts():
    n = 200
    up = np.linspace(-1, 0, n)
    assert not detect_failed_run(curves_from(np.full(n, 0.5), up))
    assert "< 0.05" in detect_failed_run(curves_from(np.zeros(n), up)).reason
    assert "> 0.95" in detect_failed_run(curves_from(np.ones(n), up)).reason
    assert "slope" in detect_failed_run(curves_from(np.full(n, 0.5), -up - 1)).reason
    with pytest.raises(ValueError):
        detect_failed_run(TrainingCurves())


def test_curves_csv_round_trip(tmp_path):
    c = curves_from([0.2, 0.4, 0.5], [-0.9, -0.5, 0.1])
    c.write_csv(tmp_path / "c.csv")
    back = TrainingCurves.read_csv(tmp_path / "c.csv")
    assert back.running_reward == c.running_reward and back.buy_ratio == c.buy_ratio
    assert c.running_reward[0] == pytest.approx(0.05 * -0.9)


# -- agents -------------------------------------------------------------------


def test_dqn_at_full_exploration_buys_half_the_time(episodes):
    cfg = DqnConfig(episodes=40, epsilon_min=1.0, hidden=(8,), batch_size=16)
    _, curves = train_dqn(episodes, cfg, rng_seed=0)
    mean = float(np.mean(curves.buy_ratio))
    assert abs(mean - 0.5) <= 4 * math.sqrt(0.25 / (30 * 40))


@pytest.mark.parametrize("train, cfg", [
    (train_dqn, DqnConfig(episodes=6, hidden=(8,), batch_size=8)),
    (train_a2c, A2cConfig(episodes=20, hidden=(8,))),
])
def test_training_is_seeded(train, cfg, episodes):
    a_agent, a = train(episodes, cfg, rng_seed=3)
    b_agent, b = train(episodes, cfg, rng_seed=3)
    _, c = train(episodes, cfg, rng_seed=4)
    assert a == b and a != c and len(a) == cfg.episodes
    assert all(np.array_equal(p, q) for p, q in zip(a_agent.net.params(), b_agent.net.params()))
    assert all(0.0 <= x <= 1.0 for x in a.buy_ratio)


def test_agent_round_trip_and_evaluation(tmp_path, episodes):
    agent, _ = train_a2c(episodes, A2cConfig(episodes=5, hidden=(8,)), rng_seed=1)
    agent.save(tmp_path / "a.json", {"note": "x"})
    back = Agent.load(tmp_path / "a.json")
    assert back.kind == "a2c" and back.config == agent.config
    genes, report = evaluate_agent(back, episodes)
    assert [g.tolist() for g in genes] == [rollout(agent, ep).tolist() for ep in episodes]
    assert report.overall.agent_purchases == 2 * sum(int(g.sum()) for g in genes)


def test_empty_episode_set():
    with pytest.raises(ValueError):
        train_a2c([], A2cConfig(episodes=1))
    with pytest.raises(ValueError):
        train_dqn([], DqnConfig(episodes=1))


@pytest.mark.xfail(reason="normalised terminal-only returns drive single-episode A2C to a never-buy "
                          "fixed point; see the decisions ledger", strict=False)
def test_single_episode_actor_critic_moves_toward_optimal_ratio():
    ep = random_episodes(1, seed=0)[0]
    target = solve_episode(ep).purchase_count / 30
    _, curves = train_a2c([ep], A2cConfig(episodes=1500, hidden=(32, 16), epsilon_decay=0.995), rng_seed=0)
    br = np.asarray(curves.buy_ratio)
    assert abs(br[-150:].mean() - target) < abs(br[:100].mean() - target)
