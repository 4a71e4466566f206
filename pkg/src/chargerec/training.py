"""Replay buffer, double-DQN targets, and the epoch loop.

Rewards are credited per decision: the K / -1 / -lambda events of the user a
decision routed are discounted back to the decision step and stored with
that decision's transition. The next state is the following decision of the
same episode.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .agents import AgentConfig, MultiAgentPolicy, Obs, QPolicy, make_policy
from .episode import run_episode
from .errors import BufferNotReady, ConfigError, NumericAbort
from .metrics import EpisodeMetrics, aggregate, pool
from .nn import SGD, Adam, backward, forward, save_checkpoint
from .scenario import Scenario

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "epoch", "seed", "policy", "mean_reward", "mean_wait_min", "mean_drive_min",
    "mean_inconvenience_min", "n_queries", "epsilon", "td_loss",
)


@dataclass
class Transition:
    obs: Obs
    action: int
    reward: float
    next_obs: Optional[Obs]
    terminal: bool

    def __post_init__(self):
        if not 0 <= self.action < self.obs.n_actions:
            raise ValueError(f"action {self.action} outside the {self.obs.n_actions} candidates")


class ReplayBuffer:
    """Fixed-capacity ring of transitions; the oldest is evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")
        self.capacity = capacity
        self._items: list = []
        self._next = 0
        self.pushed = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._next] = transition
        self._next = (self._next + 1) % self.capacity
        self.pushed += 1

    @property
    def evicted(self) -> int:
        return max(0, self.pushed - self.capacity)

    def contents(self) -> list:
        """Oldest first."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._next:] + self._items[: self._next]

    def sample(self, batch: int, rng: np.random.Generator) -> list:
        if batch > len(self._items):
            raise BufferNotReady(f"buffer holds {len(self._items)} transitions, batch needs {batch}")
        idx = rng.choice(len(self._items), size=batch, replace=False)
        return [self._items[i] for i in idx]


@dataclass
class TrainSchedule:
    epochs: int = 300
    eps_start: float = 0.9
    eps_end: float = 0.1
    eps_tail: float = 5e-4  # epsilon(epochs) - eps_end
    lr: float = 1e-3
    gamma: float = 0.95
    sync_period: int = 500
    batch: int = 64
    buffer: int = 50_000
    updates_per_epoch: int = 100
    optimizer: str = "adam"
    K: float = 10.0
    lam: float = 1.0
    eval_every: int = 25
    checkpoint_every: int = 25
    test_seeds: tuple = tuple(range(11))
    seed: int = 0  # network init and exploration
    first_episode_seed: int = 0

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.eps_start >= self.eps_end > 0:
            raise ConfigError("need eps_start >= eps_end > 0")
        if self.eps_start > 1:
            raise ConfigError("eps_start must be <= 1")
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma must lie in [0, 1)")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.sync_period < 1 or self.batch < 1 or self.buffer < 1 or self.updates_per_epoch < 0:
            raise ConfigError("sync_period, batch and buffer must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.eval_every < 0 or self.checkpoint_every < 0:
            raise ConfigError("eval_every and checkpoint_every must be >= 0")


def epsilon_at(schedule: TrainSchedule, epoch: int) -> float:
    """Exponential decay from eps_start at epoch 0 to eps_end (+ eps_tail) at the last epoch."""
    span = schedule.eps_start - schedule.eps_end
    if schedule.epochs == 0 or span == 0:
        return schedule.eps_start
    rate = math.log(span / schedule.eps_tail) / schedule.epochs if span > schedule.eps_tail else 0.0
    eps = schedule.eps_end + span * math.exp(-rate * epoch)
    return min(schedule.eps_start, max(schedule.eps_end, eps))


# -- TD learning ---------------------------------------------------------------------


def _bootstrap(policy: QPolicy, next_obs: list, target_nets: dict) -> np.ndarray:
    """Q_target(s', argmax_a' Q_online(s', a')) for each next state."""
    online = policy.batch_forward(next_obs, policy.nets)
    target = policy.batch_forward(next_obs, target_nets)
    best = np.array([
        o + int(np.argmax(online.q[o:o + c])) for o, c in zip(online.offsets, online.counts)
    ], dtype=np.int64)
    return target.q[best]


def td_targets(batch: Sequence[Transition], policy: QPolicy, gamma: float, target_nets: Optional[dict] = None) -> np.ndarray:
    """Double-DQN targets: r for terminal transitions, else r + gamma * Q_target(s', argmax Q_online)."""
    target_nets = policy.target if target_nets is None else target_nets
    y = np.array([t.reward for t in batch], dtype=np.float64)
    live = [i for i, t in enumerate(batch) if not t.terminal and gamma != 0.0]
    if live:
        y[live] += gamma * _bootstrap(policy, [batch[i].next_obs for i in live], target_nets)
    return y


def td_target(transition: Transition, policy: QPolicy, gamma: float, target_nets: Optional[dict] = None) -> float:
    return float(td_targets([transition], policy, gamma, target_nets)[0])


def dqn_loss_and_grads(policy: QPolicy, batch: Sequence[Transition], gamma: float):
    """Mean squared TD error over the batch and its gradient w.r.t. the online nets."""
    y = td_targets(batch, policy, gamma)
    out = policy.batch_forward([t.obs for t in batch], policy.nets)
    chosen = out.offsets + np.array([t.action for t in batch], dtype=np.int64)
    err = out.q[chosen] - y
    dq = np.zeros_like(out.q)
    dq[chosen] = 2.0 * err / len(batch)
    return float(np.mean(err ** 2)), policy.batch_backward(out, dq, policy.nets)


def multiagent_loss_and_grads(policy: MultiAgentPolicy, batch: Sequence[Transition], gamma: float):
    """Per-station accept/reject regression.

    The routed station's accept value is regressed on the user's reward, the
    other candidates' reject values on 0, each bootstrapped with that
    station's own value for the action it takes in the next auction.
    """
    net = policy.nets["q"]
    n = batch[0].obs.rows.shape[0]
    rows = np.concatenate([t.obs.rows for t in batch])
    out, cache = forward(net, rows)
    boot = np.zeros((len(batch), n))
    live = [i for i, t in enumerate(batch) if not t.terminal and gamma != 0.0]
    if live:
        nrows = np.concatenate([batch[i].next_obs.rows for i in live])
        online = forward(net, nrows)[0].reshape(len(live), n, 2)
        target = forward(policy.target["q"], nrows)[0].reshape(len(live), n, 2)
        for j, i in enumerate(live):
            nxt = batch[i].next_obs
            margin = online[j, nxt.cand, 1] - online[j, nxt.cand, 0]
            winner = int(nxt.cand[int(np.argmax(margin))])
            acts = np.zeros(n, dtype=np.int64)
            acts[winner] = 1
            boot[i] = target[j, np.arange(n), acts]
    dout = np.zeros_like(out)
    sq, count = 0.0, 0
    for i, t in enumerate(batch):
        for pos, station in enumerate(t.obs.cand):
            accepted = pos == t.action
            y = (t.reward if accepted else 0.0) + gamma * boot[i, station]
            r = i * n + int(station)
            err = out[r, int(accepted)] - y
            dout[r, int(accepted)] += 2.0 * err
            sq += err * err
            count += 1
    dout /= count
    grads, _ = backward(net, cache, dout)
    return sq / count, {"q": grads}


def train_step(policy: QPolicy, batch: Sequence[Transition], optimizer, gamma: float) -> float:
    """One gradient step on the squared TD error; returns the pre-step loss."""
    if not batch:
        raise ValueError("empty batch")
    if isinstance(policy, MultiAgentPolicy):
        loss, grads = multiagent_loss_and_grads(policy, batch, gamma)
    else:
        loss, grads = dqn_loss_and_grads(policy, batch, gamma)
    optimizer.step(policy.nets, grads)
    return loss


def sync_target(policy: QPolicy, period: int, step: int) -> bool:
    """Hard-copy online into target every ``period`` steps. Returns whether it copied."""
    if period < 1:
        raise ConfigError("sync period must be >= 1")
    if step % period == 0:
        policy.target = {n: p.copy() for n, p in policy.nets.items()}
        return True
    return False


def make_optimizer(schedule: TrainSchedule):
    return Adam(schedule.lr) if schedule.optimizer == "adam" else SGD(schedule.lr)


# -- episodes -> transitions ---------------------------------------------------------


def build_transitions(result, K: float, lam: float, gamma: float) -> list:
    """One transition per decision, chained to the next decision of the episode."""
    decisions = [d for d in result.decisions if d.obs is not None]
    out = []
    for i, d in enumerate(decisions):
        user = result.ledger.users[d.query_id]
        r = user.reward(K, lam, gamma, origin=d.t)
        nxt = decisions[i + 1].obs if i + 1 < len(decisions) else None
        out.append(Transition(d.obs, d.action, r, nxt, nxt is None))
    return out


def evaluate(scenario: Scenario, policy, seeds: Sequence[int], K: float = 10.0, lam: float = 1.0) -> list:
    """Greedy episodes on each seed; returns per-seed metrics."""
    return [aggregate(run_episode(scenario, policy, s).ledger, K, lam) for s in seeds]


@dataclass
class TrainResult:
    policy: QPolicy
    metrics: list = field(default_factory=list)  # one dict per epoch
    evaluations: list = field(default_factory=list)  # (epoch, seed, EpisodeMetrics); seed None = pooled
    train_steps: int = 0
    evicted_at: list = field(default_factory=list)

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.metrics:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def final_evaluation(self):
        pooled = [m for e, s, m in self.evaluations if s is None]
        return pooled[-1] if pooled else None


def _finite_max_abs(w: np.ndarray) -> Optional[float]:
    finite = np.abs(w[np.isfinite(w)])
    return float(finite.max()) if finite.size else None


def _dump_diagnostics(out_dir, epoch, policy, loss, extra) -> Optional[str]:
    if out_dir is None:
        return None
    path = Path(out_dir) / f"nan_dump_epoch{epoch:04d}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    stats = {
        name: {"finite": p.all_finite(), "max_abs": [_finite_max_abs(w) for w in p.weights]}
        for name, p in policy.nets.items()
    }
    path.write_text(json.dumps({"epoch": epoch, "loss": repr(loss), "nets": stats, **extra}, indent=1))
    return str(path)


def run_training(
    scenario: Scenario,
    kind: str,
    schedule: TrainSchedule,
    agent_cfg: Optional[AgentConfig] = None,
    out_dir=None,
    callback: Optional[Callable] = None,
    policy: Optional[QPolicy] = None,
) -> TrainResult:
    """Train a learned policy for ``schedule.epochs`` episodes.

    Episode ``e`` is played on seed ``first_episode_seed + e`` with
    ``epsilon_at(e)``. After each episode its transitions enter the buffer
    and ``updates_per_epoch`` gradient steps run. Greedy evaluations on the
    test seeds happen every ``eval_every`` epochs and after the last one.
    """
    schedule.validate()
    agent_cfg = agent_cfg or AgentConfig()
    init_rng, explore_rng, sample_rng = (np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(schedule.seed).spawn(3))
    if policy is None:
        policy = make_policy(kind, scenario, agent_cfg, init_rng)
    if not policy.learned:
        raise ConfigError(f"{kind!r} is a rule-based policy and cannot be trained")
    optimizer = make_optimizer(schedule)
    buffer = ReplayBuffer(schedule.buffer)
    result = TrainResult(policy)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    steps = 0

    for epoch in range(schedule.epochs):
        eps = epsilon_at(schedule, epoch)
        seed = schedule.first_episode_seed + epoch
        episode = run_episode(scenario, policy, seed, eps, explore_rng, record=True)
        before = buffer.evicted
        for tr in build_transitions(episode, schedule.K, schedule.lam, schedule.gamma):
            buffer.push(tr)
        if buffer.evicted and not before:
            result.evicted_at.append(epoch)
            log.info("replay buffer started evicting at epoch %d", epoch)
        losses = []
        for _ in range(schedule.updates_per_epoch):
            if len(buffer) < schedule.batch:
                break
            loss = train_step(policy, buffer.sample(schedule.batch, sample_rng), optimizer, schedule.gamma)
            steps += 1
            sync_target(policy, schedule.sync_period, steps)
            losses.append(loss)
        td_loss = float(np.mean(losses)) if losses else 0.0
        if not math.isfinite(td_loss) or not all(p.all_finite() for p in policy.nets.values()):
            path = _dump_diagnostics(out, epoch, policy, td_loss, {"train_steps": steps})
            raise NumericAbort(f"non-finite loss or parameters at epoch {epoch}", path)
        m = aggregate(episode.ledger, schedule.K, schedule.lam)
        result.metrics.append({
            "epoch": epoch, "seed": seed, "policy": kind, "mean_reward": m.reward,
            "mean_wait_min": m.wait_min, "mean_drive_min": m.drive_min,
            "mean_inconvenience_min": m.inconvenience_min, "n_queries": m.n_queries,
            "epsilon": eps, "td_loss": td_loss,
        })
        last = epoch == schedule.epochs - 1
        if schedule.eval_every and ((epoch + 1) % schedule.eval_every == 0 or last):
            per_seed = evaluate(scenario, policy, schedule.test_seeds, schedule.K, schedule.lam)
            for s, pm in zip(schedule.test_seeds, per_seed):
                result.evaluations.append((epoch, s, pm))
            result.evaluations.append((epoch, None, pool(per_seed)))
        if out is not None and schedule.checkpoint_every and ((epoch + 1) % schedule.checkpoint_every == 0):
            save_checkpoint(out / "checkpoints" / f"epoch_{epoch + 1:04d}.json", kind, policy.nets, policy.hyperparameters())
        if callback is not None:
            callback(epoch, result)
    result.train_steps = steps
    return result
