"""Agent-facing view of the world: state encoding, rewards, per-user ledgers."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .scenario import STEP_MINUTES, STEPS_PER_DAY, Query
from .sim import DAYS_PER_WEEK, StepAccounting, World

GLOBAL_DIM = 2 + DAYS_PER_WEEK
STATION_BASE_DIM = 5
QUERY_DIM = 3


def station_dim(k: int) -> int:
    return STATION_BASE_DIM + k


@dataclass
class EncodedState:
    """Numeric view of one timestep.

    ``queued[n, j]`` counts dispatched cars expected at station ``n`` in
    ``j + 1`` steps (the last slot also holds anything further out). It is
    the only part that changes between decisions within a step.
    """

    t: int
    global_features: np.ndarray
    station_base: np.ndarray
    queued: np.ndarray
    query_features: np.ndarray
    count_scale: float

    @property
    def k(self) -> int:
        return self.queued.shape[1]

    def station_features(self, idx=None) -> np.ndarray:
        base = self.station_base if idx is None else self.station_base[idx]
        q = self.queued if idx is None else self.queued[idx]
        return np.concatenate([base, q / self.count_scale], axis=-1)

    def copy(self) -> "EncodedState":
        return EncodedState(self.t, self.global_features, self.station_base, self.queued.copy(), self.query_features, self.count_scale)


def global_features(t: int, dow: int) -> np.ndarray:
    angle = 2.0 * math.pi * (t % STEPS_PER_DAY) / STEPS_PER_DAY
    onehot = np.zeros(DAYS_PER_WEEK)
    onehot[dow % DAYS_PER_WEEK] = 1.0
    return np.concatenate([[math.sin(angle), math.cos(angle)], onehot])


def _unit(x, n):
    # maps 0..n-1 onto [-1, 1]
    return 2.0 * x / (n - 1) - 1.0 if n > 1 else 0.0 * x


def grid_position(world_or_grid, rows, cols):
    grid = getattr(world_or_grid, "grid", world_or_grid)
    return _unit(np.asarray(rows, dtype=np.float64), grid.rows), _unit(np.asarray(cols, dtype=np.float64), grid.cols)


def queued_arrivals(world: World, t: int, k: int) -> np.ndarray:
    """Expected dispatched arrivals per station and horizon from the in-flight vehicles."""
    out = np.zeros((world.n_stations, k), dtype=np.int64)
    for v in world.inbound():
        # arrives during world_step(t + remaining - 1)
        dt = min(max(v.remaining - 1, 1), k)
        out[v.station, dt - 1] += 1
    return out


def encode_state(world: World, queries: Sequence[Query], t: int, k: int = 8, count_scale: float = 10.0) -> EncodedState:
    """Encode the world as seen by the agent at the start of step ``t``."""
    caps = world.capacities().astype(np.float64)
    occ = world.occupied().astype(np.float64)
    waiting = world.waiting_counts().astype(np.float64)
    srow, scol = grid_position(world, [s.cell.row for s in world.stations], [s.cell.col for s in world.stations])
    base = np.column_stack([occ / caps, (caps - occ) / count_scale, waiting / count_scale, srow, scol])
    if queries:
        qrow, qcol = grid_position(world, [q.cell.row for q in queries], [q.cell.col for q in queries])
        qstep = np.array([q.step for q in queries], dtype=np.float64) / STEPS_PER_DAY
        qf = np.column_stack([qrow, qcol, qstep])
    else:
        qf = np.zeros((0, QUERY_DIM))
    return EncodedState(t, global_features(t, world.dow), base, queued_arrivals(world, t, k), qf, count_scale)


def register_recommendation(state: EncodedState, station: int, drive_steps: int) -> int:
    """Record a decision made this step so later decisions see it. Returns the 1-based slot."""
    if drive_steps < 1:
        raise ValueError("drive_steps must be >= 1")
    slot = min(drive_steps, state.k)
    state.queued[station, slot - 1] += 1
    return slot


def compute_reward(acct, K: float = 10.0, lam: float = 1.0) -> float:
    """Per-step reward: K per seated dispatched user, minus waiting and weighted driving users."""
    return K * acct.n_arrive - acct.n_wait - lam * acct.n_drive


# -- episode ledger --------------------------------------------------------------


@dataclass
class UserRecord:
    query_id: int
    issue_step: int
    row: int
    col: int
    station: int
    planned_drive_steps: int
    drive_steps: int = 0
    wait_steps: int = 0
    arrival_step: Optional[int] = None
    seat_step: Optional[int] = None
    final_station: Optional[int] = None
    # (step, kind) with kind in {"drive", "wait", "seat"}
    events: list = field(default_factory=list)

    def inconvenience_steps(self, lam: float = 1.0) -> float:
        return self.wait_steps + lam * self.drive_steps

    def reward(self, K: float, lam: float, gamma: float = 1.0, origin: Optional[int] = None) -> float:
        """This user's reward events, discounted back to ``origin`` (default: issue step)."""
        t0 = self.issue_step if origin is None else origin
        total = 0.0
        for step, kind in self.events:
            value = K if kind == "seat" else (-1.0 if kind == "wait" else -lam)
            total += value * gamma ** (step - t0)
        return total


class EpisodeLedger:
    """All dispatched users of one episode plus the per-step counts."""

    def __init__(self):
        self.users: dict = {}
        self.steps: list = []

    def record_dispatch(self, query: Query, station: int, drive_steps: int) -> None:
        self.users[query.id] = UserRecord(query.id, query.step, query.cell.row, query.cell.col, station, drive_steps)

    def record_step(self, acct: StepAccounting) -> None:
        t = acct.t
        for qid in acct.driving:
            u = self.users[qid]
            u.drive_steps += 1
            u.events.append((t, "drive"))
        for qid in acct.arrived:
            self.users[qid].arrival_step = t
        for qid, _, dest, _ in acct.redirected:
            self.users[qid].final_station = dest
        for qid in acct.waiting:
            u = self.users[qid]
            u.wait_steps += 1
            if u.arrival_step is None:
                u.arrival_step = t
            u.events.append((t, "wait"))
        for qid in acct.seated:
            u = self.users[qid]
            u.seat_step = t
            if u.arrival_step is None:
                u.arrival_step = t
            u.events.append((t, "seat"))
        self.steps.append({"t": t, "n_arrive": acct.n_arrive, "n_wait": acct.n_wait, "n_drive": acct.n_drive,
                           "departures": acct.departures, "exogenous_arrivals": acct.exogenous_arrivals})

    def reward_stream(self, K: float, lam: float) -> list:
        return [K * s["n_arrive"] - s["n_wait"] - lam * s["n_drive"] for s in self.steps]

    def total_reward(self, K: float, lam: float) -> float:
        return float(sum(self.reward_stream(K, lam)))

    def discounted_reward(self, K: float, lam: float, gamma: float) -> float:
        return float(sum(r * gamma ** i for i, r in enumerate(self.reward_stream(K, lam))))

    def to_trace(self) -> dict:
        users = []
        for u in self.users.values():
            d = asdict(u)
            d.pop("events")
            users.append(d)
        return {"steps": list(self.steps), "users": users}

    def dumps(self) -> str:
        return json.dumps(self.to_trace(), indent=1)

    @classmethod
    def from_trace(cls, trace: dict) -> "EpisodeLedger":
        ledger = cls()
        ledger.steps = list(trace["steps"])
        for d in trace["users"]:
            ledger.users[d["query_id"]] = UserRecord(**d)
        return ledger


@dataclass
class Objective:
    total_steps: float
    n_users: int
    mean_wait_min: float
    mean_drive_min: float
    mean_inconvenience_min: float


def episode_objective(ledger: EpisodeLedger, lam: float = 1.0) -> Objective:
    """Total inconvenience (wait + lam * drive, in steps) plus per-user means in minutes."""
    users = list(ledger.users.values())
    if not users:
        return Objective(0.0, 0, 0.0, 0.0, 0.0)
    total = float(sum(u.inconvenience_steps(lam) for u in users))
    n = len(users)
    wait = sum(u.wait_steps for u in users) / n * STEP_MINUTES
    drive = sum(u.drive_steps for u in users) / n * STEP_MINUTES
    return Objective(total, n, wait, drive, total / n * STEP_MINUTES)
