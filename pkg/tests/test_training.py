import dataclasses

import numpy as np
import pytest
from scipy.stats import chisquare

from chargerec.agents import AgentConfig, Obs, make_policy, row_dim
from chargerec.episode import run_episode
from chargerec.errors import BufferNotReady, ConfigError, NumericAbort
from chargerec.nn import SGD, Adam, MLPParams
from chargerec.scenario import bundled
from chargerec.training import (
    ReplayBuffer, TrainSchedule, Transition, build_transitions, epsilon_at, run_training, sync_target, td_target,
    td_targets, train_step,
)

SMALL = AgentConfig(hidden=16, depth=2, embed=8, value_hidden=8, ffdqn_hidden=16)
QUICK = TrainSchedule(epochs=3, updates_per_epoch=5, batch=16, buffer=2000, sync_period=4, eval_every=0,
                      checkpoint_every=0, test_seeds=(0, 1))


@pytest.fixture(scope="module")
def desk():
    return bundled("desk")


def obs_with(rows):
    rows = np.asarray(rows, dtype=float)
    return Obs(np.arange(len(rows)), np.zeros(12), rows=rows)


def linear_policy(desk, w):
    """A conv policy whose Q is ``rows @ w`` (no hidden layers, no dueling)."""
    policy = make_policy("conv", desk, dataclasses.replace(SMALL, dueling=False))
    d = row_dim(SMALL.k)
    net = MLPParams([d, 1], [np.asarray(w, dtype=float).reshape(d, 1)], [np.zeros(1)])
    policy.nets = {"q": net}
    policy.target = {"q": net.copy()}
    return policy


def unit_rows(n, d):
    return np.eye(n, d)


# -- replay buffer ---------------------------------------------------------------


def test_buffer_evicts_oldest():
    buf = ReplayBuffer(2)
    for x in "abc":
        buf.push(x)
    assert len(buf) == 2 and buf.contents() == ["b", "c"] and buf.evicted == 1


def test_buffer_fifo_over_many_pushes():
    buf = ReplayBuffer(5)
    for i in range(23):
        buf.push(i)
        assert len(buf) <= 5
    assert buf.contents() == [18, 19, 20, 21, 22]


def test_full_batch_is_a_permutation():
    buf = ReplayBuffer(10)
    for i in range(7):
        buf.push(i)
    assert sorted(buf.sample(7, np.random.default_rng(0))) == list(range(7))


def test_sampling_is_uniform():
    buf = ReplayBuffer(20)
    for i in range(20):
        buf.push(i)
    rng = np.random.default_rng(1)
    counts = np.bincount([x for _ in range(10_000) for x in buf.sample(1, rng)], minlength=20)
    assert chisquare(counts).pvalue > 0.01


def test_undersized_buffer_is_not_ready():
    buf = ReplayBuffer(4)
    buf.push(1)
    with pytest.raises(BufferNotReady):
        buf.sample(2, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        ReplayBuffer(0)


def test_transition_action_must_be_a_candidate():
    with pytest.raises(ValueError):
        Transition(obs_with([[0.0], [1.0]]), 2, 0.0, None, True)


# -- TD targets --------------------------------------------------------------------


def test_terminal_and_zero_gamma_targets(desk):
    d = row_dim(SMALL.k)
    policy = linear_policy(desk, np.arange(d))
    nxt = obs_with(unit_rows(3, d))
    assert td_target(Transition(obs_with(unit_rows(2, d)), 0, 5.0, None, True), policy, 0.9) == 5.0
    assert td_target(Transition(obs_with(unit_rows(2, d)), 1, -2.0, nxt, False), policy, 0.0) == -2.0


def test_double_dqn_hand_case(desk):
    # online prefers a1; the target net values a1 at 3 and a0 at 5
    d = row_dim(SMALL.k)
    policy = linear_policy(desk, np.eye(d)[1])
    target_w = np.zeros(d)
    target_w[0], target_w[1] = 5.0, 3.0
    policy.target = {"q": MLPParams([d, 1], [target_w.reshape(d, 1)], [np.zeros(1)])}
    tr = Transition(obs_with(unit_rows(2, d)), 0, 1.0, obs_with(unit_rows(2, d)), False)
    assert td_target(tr, policy, 0.5) == pytest.approx(2.5)


def test_fixed_point_step_changes_nothing(desk):
    d = row_dim(SMALL.k)
    w = np.random.default_rng(0).normal(size=d)
    policy = linear_policy(desk, w)
    rows = np.random.default_rng(1).normal(size=(3, d))
    q = rows @ w
    batch = [Transition(obs_with(rows), a, float(q[a]), None, True) for a in range(3)]
    loss = train_step(policy, batch, SGD(0.1), 0.9)
    assert loss == pytest.approx(0.0, abs=1e-20)
    assert np.allclose(policy.nets["q"].weights[0][:, 0], w, rtol=0, atol=1e-15)


def test_single_transition_gradient_by_hand(desk):
    d = row_dim(SMALL.k)
    w = np.zeros(d)
    policy = linear_policy(desk, w)
    rows = np.random.default_rng(2).normal(size=(2, d))
    train_step(policy, [Transition(obs_with(rows), 1, 4.0, None, True)], SGD(0.1), 0.9)
    # loss (w.x - 4)^2 at w = 0 has gradient -8 x
    assert np.allclose(policy.nets["q"].weights[0][:, 0], 0.8 * rows[1])
    assert policy.nets["q"].biases[0][0] == pytest.approx(0.8)


@pytest.mark.parametrize("kind", ["conv", "graph", "ffdqn", "grouping", "multiagent"])
def test_loss_falls_on_a_frozen_batch(desk, kind):
    policy = make_policy(kind, desk, SMALL, np.random.default_rng(0))
    episode = run_episode(desk, policy, seed=0, epsilon=0.5, explore_rng=np.random.default_rng(1), record=True, steps=80)
    batch = build_transitions(episode, 10.0, 1.0, 0.9)[:32]
    opt = Adam(1e-3)
    losses = [train_step(policy, batch, opt, 0.0) for _ in range(50)]
    assert losses[-1] < losses[0]


def test_sync_target(desk):
    policy = make_policy("conv", desk, SMALL, np.random.default_rng(0))
    policy.nets["q"].weights[0] += 1.0
    assert not sync_target(policy, 3, 4)
    assert not policy.target["q"].equals(policy.nets["q"])
    assert sync_target(policy, 3, 6)
    assert policy.target["q"].equals(policy.nets["q"])
    with pytest.raises(ConfigError):
        sync_target(policy, 0, 1)


def test_targets_move_after_sync_only_if_online_diverged(desk):
    policy = make_policy("conv", desk, SMALL, np.random.default_rng(0))
    episode = run_episode(desk, policy, seed=1, record=True, steps=70)
    batch = [t for t in build_transitions(episode, 10.0, 1.0, 0.9) if not t.terminal][:16]
    y0 = td_targets(batch, policy, 0.9)
    sync_target(policy, 1, 1)
    assert np.array_equal(td_targets(batch, policy, 0.9), y0)
    policy.nets["q"].weights[-1] *= 2.0
    y1 = td_targets(batch, policy, 0.9)
    sync_target(policy, 1, 2)
    assert not np.array_equal(td_targets(batch, policy, 0.9), y1)


# -- schedule and bookkeeping ------------------------------------------------------


def test_epsilon_schedule():
    sch = TrainSchedule(epochs=300)
    eps = [epsilon_at(sch, e) for e in range(301)]
    assert eps[0] == 0.9
    assert abs(eps[-1] - 0.1) <= 1e-3
    assert all(b <= a for a, b in zip(eps, eps[1:]))
    assert all(0.1 <= e <= 0.9 for e in eps)


def test_schedule_validation():
    for bad in (dict(gamma=1.0), dict(eps_end=0.0), dict(eps_start=0.05), dict(lr=-1.0), dict(optimizer="rmsprop")):
        with pytest.raises(ConfigError):
            TrainSchedule(**bad).validate()


def test_credit_conserves_episode_reward(desk):
    policy = make_policy("conv", desk, SMALL, np.random.default_rng(0))
    episode = run_episode(desk, policy, seed=5, epsilon=0.3, explore_rng=np.random.default_rng(0), record=True)
    trans = build_transitions(episode, 10.0, 1.0, 1.0)
    assert len(trans) == len(episode.ledger.users)
    assert sum(t.reward for t in trans) == pytest.approx(episode.ledger.total_reward(10.0, 1.0))
    assert trans[-1].terminal and not any(t.terminal for t in trans[:-1])


def test_zero_learning_rate_keeps_evaluations_flat(desk):
    sch = dataclasses.replace(QUICK, epochs=4, lr=0.0, eval_every=2)
    res = run_training(desk, "conv", sch, SMALL)
    pooled = [m for _, s, m in res.evaluations if s is None]
    assert len(pooled) == 2 and pooled[0] == pooled[1]


def test_training_is_deterministic(desk):
    a = run_training(desk, "graph", QUICK, SMALL).metrics_csv()
    b = run_training(desk, "graph", QUICK, SMALL).metrics_csv()
    assert a == b
    assert a.splitlines()[0].split(",") == [
        "epoch", "seed", "policy", "mean_reward", "mean_wait_min", "mean_drive_min",
        "mean_inconvenience_min", "n_queries", "epsilon", "td_loss",
    ]
    assert len(a.splitlines()) == 1 + QUICK.epochs


def test_episode_seeds_follow_epochs(desk):
    res = run_training(desk, "conv", dataclasses.replace(QUICK, first_episode_seed=7), SMALL)
    assert [row["seed"] for row in res.metrics] == [7, 8, 9]


def test_rule_based_policies_cannot_train(desk):
    with pytest.raises(ConfigError):
        run_training(desk, "nearest", QUICK, SMALL)


def test_non_finite_parameters_abort_with_dump(desk, tmp_path):
    policy = make_policy("conv", desk, SMALL, np.random.default_rng(0))
    policy.nets["q"].weights[0][0, 0] = np.nan
    with pytest.raises(NumericAbort) as info:
        run_training(desk, "conv", QUICK, SMALL, out_dir=tmp_path, policy=policy)
    assert info.value.dump_path is not None
    assert (tmp_path / info.value.dump_path.split("/")[-1]).exists()
