"""One simulated day: queries arrive, the policy routes them, the world advances."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .agents import Policy, act
from .mdp import EpisodeLedger
from .scenario import Scenario
from .sim import DAYS_PER_WEEK, EpisodeStreams, world_step


def day_of_week(seed: int) -> int:
    return seed % DAYS_PER_WEEK


@dataclass
class EpisodeResult:
    seed: int
    ledger: EpisodeLedger
    decisions: list = field(default_factory=list)
    accounts: list = field(default_factory=list)
    n_queries: int = 0
    world: object = None
    open_chargers: list = field(default_factory=list)  # per step, after the step resolves
    waiting_counts: list = field(default_factory=list)  # per step, queue length at each station

    def saturated_fraction(self, first_step: int = 0, last_step: Optional[int] = None) -> float:
        """Mean share of stations with no open charger over steps [first_step, last_step]."""
        window = self.open_chargers[first_step: None if last_step is None else last_step + 1]
        if not window:
            raise ValueError("no occupancy recorded for that window; run with track_occupancy=True")
        return float(np.mean([(o == 0).mean() for o in window]))


def run_episode(
    scenario: Scenario,
    policy: Policy,
    seed: int,
    epsilon: float = 0.0,
    explore_rng: Optional[np.random.Generator] = None,
    record: bool = False,
    keep_accounts: bool = False,
    log_stays: bool = False,
    steps: Optional[int] = None,
    track_occupancy: bool = False,
) -> EpisodeResult:
    """Play one episode from midnight to midnight.

    Demand, departures and the query shuffle depend only on ``seed``, so
    different policies face identical exogenous randomness. ``explore_rng``
    drives epsilon-greedy exploration and is only needed when ``epsilon > 0``.
    """
    streams = EpisodeStreams.from_seed(seed)
    dow = day_of_week(seed)
    world = scenario.make_world(dow, log_stays=log_stays)
    ledger = EpisodeLedger()
    decisions = [] if record else None
    accounts = []
    opens, queues = [], []
    next_id = 0
    n_steps = scenario.episode_steps if steps is None else steps
    for t in range(n_steps):
        queries = scenario.generate_queries(t, dow, streams.queries, next_id)
        next_id += len(queries)
        recs = act(policy, world, queries, t, streams.shuffle, explore_rng, epsilon, decisions)
        by_id = {q.id: q for q in queries}
        for r in recs:
            ledger.record_dispatch(by_id[r.query_id], r.station, r.drive_steps)
        acct = world_step(world, recs, t, streams)
        ledger.record_step(acct)
        if keep_accounts:
            accounts.append(acct)
        if track_occupancy:
            opens.append(world.open_chargers().copy())
            queues.append([len(o.waiting) for o in world.occupancy])
    return EpisodeResult(seed, ledger, decisions or [], accounts, next_id, world, opens, queues)
