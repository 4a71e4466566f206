"""Shared test utilities: station relabeling and decision contexts outside the episode loop."""

from __future__ import annotations

import copy

import numpy as np

from chargerec.agents import DecisionContext
from chargerec.mdp import encode_state
from chargerec.scenario import Scenario


def relabel(scenario: Scenario, perm) -> Scenario:
    """A copy of ``scenario`` whose station ``i`` is the original station ``perm[i]``."""
    d = scenario.to_dict()
    st = d["stations"]
    d["stations"] = [{"id": i, "row": st[p]["row"], "col": st[p]["col"], "capacity": st[p]["capacity"]} for i, p in enumerate(perm)]
    d["exogenous_rate"] = [d["exogenous_rate"][p] for p in perm]
    if d["initial_occupied"] is not None:
        d["initial_occupied"] = [d["initial_occupied"][p] for p in perm]
    return Scenario.from_dict(d)


def relabel_world(world, relabeled: Scenario, perm):
    """The same physical world state expressed in the relabeled scenario's ids."""
    inv = {int(p): i for i, p in enumerate(perm)}
    out = relabeled.make_world(world.dow)
    out.occupancy = [copy.deepcopy(world.occupancy[p]) for p in perm]
    for occ in out.occupancy:
        for v in occ.inbound:
            v.station = inv[v.station]
            if v.group is not None:
                v.group = tuple(sorted(inv[m] for m in v.group))
    return out


def context(policy, world, queries, t, qidx=0, candidates=None) -> DecisionContext:
    """The context ``act`` would build for ``queries[qidx]``; ``candidates`` overrides the candidate list."""
    cfg = policy.cfg
    state = encode_state(world, queries, t, cfg.k, cfg.count_scale)
    q = queries[qidx]
    table = policy.table
    return DecisionContext(
        state, world, q, qidx, table.distances(q.cell), table.drive_steps[q.cell.row, q.cell.col],
        policy.candidates(q) if candidates is None else np.asarray(candidates), cfg.distance_scale_km,
    )


def bids_by_station(policy, ctx, relabel_to=None) -> dict:
    """Map station id (in original labels when ``relabel_to`` is given) -> bid."""
    obs = policy.observe(ctx)
    bids = np.asarray(policy.bids(obs))
    stations = [int(ctx.candidates[i]) for i in range(bids.size)]
    if relabel_to is not None:
        stations = [int(relabel_to[s]) for s in stations]
    return dict(zip(stations, bids.tolist()))
