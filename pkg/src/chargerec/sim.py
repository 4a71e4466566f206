"""Charging-station transition dynamics.

One call to :func:`world_step` advances every station by one timestep:
charging cars depart, exogenous cars arrive, dispatched vehicles move one
step closer, and each station seats its queue and arrivals in priority
order. Anything beyond capacity waits, FIFO, for a later step.
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, InvariantError
from .geo import CellCoord, GridSpec, steps_for_distance

DAYS_PER_WEEK = 7


@dataclass(frozen=True)
class StationPhysical:
    id: int
    cell: CellCoord
    capacity: int

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigError(f"station {self.id}: capacity must be >= 1")


@dataclass
class Charging:
    query_id: Optional[int]  # None for exogenous cars
    start: int


@dataclass
class WaitingVehicle:
    query_id: Optional[int]
    since: int


@dataclass
class InboundVehicle:
    query_id: int
    station: int
    remaining: int
    total: int
    dispatched: int
    # stations the vehicle may be redirected to on arrival (grouping policy)
    group: Optional[tuple] = None


@dataclass
class StationOccupancy:
    chargers: list = field(default_factory=list)
    waiting: deque = field(default_factory=deque)
    inbound: list = field(default_factory=list)

    @property
    def occupied(self) -> int:
        return len(self.chargers)

    def open_chargers(self, capacity: int) -> int:
        return capacity - len(self.chargers)


@dataclass
class ArrivalModel:
    """Departure probability and the exogenous arrival-rate table.

    ``exogenous_rate[station, bin, dow]`` is the mean number of cars arriving
    per step; each bin covers ``steps_per_bin`` consecutive steps.
    """

    p_depart: float
    exogenous_rate: np.ndarray
    steps_per_bin: int = 4

    def __post_init__(self):
        self.exogenous_rate = np.asarray(self.exogenous_rate, dtype=np.float64)
        if not 0.0 < self.p_depart < 1.0:
            raise ConfigError(f"p_depart must lie in (0, 1), got {self.p_depart}")
        if self.exogenous_rate.ndim != 3 or self.exogenous_rate.shape[2] != DAYS_PER_WEEK:
            raise ConfigError("exogenous_rate must have shape (stations, bins, 7)")
        if (self.exogenous_rate < 0).any() or not np.isfinite(self.exogenous_rate).all():
            raise ConfigError("exogenous rates must be finite and non-negative")
        if self.steps_per_bin < 1:
            raise ConfigError("steps_per_bin must be >= 1")

    def rate(self, station: int, t: int, dow: int) -> float:
        b = t // self.steps_per_bin
        n, bins, _ = self.exogenous_rate.shape
        if not (0 <= station < n and 0 <= b < bins and 0 <= dow < DAYS_PER_WEEK):
            raise ConfigError(f"no exogenous rate for station={station} t={t} dow={dow}")
        return float(self.exogenous_rate[station, b, dow])


@dataclass
class EpisodeStreams:
    """Independent random streams for one episode, all derived from one seed.

    Departures and exogenous arrivals consume a fixed number of draws per
    step regardless of the state, so two policies run on the same seed see
    the same demand and the same charger turnover draws.
    """

    seed: int
    departures: np.random.Generator
    exogenous: np.random.Generator
    queries: np.random.Generator
    shuffle: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "EpisodeStreams":
        children = np.random.SeedSequence(seed).spawn(4)
        return cls(seed, *(np.random.Generator(np.random.PCG64(c)) for c in children))


@dataclass
class Recommendation:
    query_id: int
    station: int
    drive_steps: int
    group: Optional[tuple] = None


@dataclass
class StepAccounting:
    t: int
    n_arrive: int = 0
    n_wait: int = 0
    n_drive: int = 0
    seated: list = field(default_factory=list)
    waiting: list = field(default_factory=list)
    driving: list = field(default_factory=list)
    arrived: list = field(default_factory=list)
    redirected: list = field(default_factory=list)
    exogenous_arrivals: int = 0
    departures: int = 0


# -- station-level pieces ----------------------------------------------------


def departure_mask(occupied: int, p_depart: float, rng: np.random.Generator, slots: Optional[int] = None) -> np.ndarray:
    """Boolean mask over charging cars: True where the car leaves this step.

    ``slots`` uniforms are drawn (default ``occupied``); only the first
    ``occupied`` are used, which keeps stream consumption state-independent.
    """
    n = occupied if slots is None else slots
    if n < occupied:
        raise ValueError("slots must cover every occupied charger")
    u = rng.random(n)
    return u[:occupied] < p_depart


def sample_departures(occupied: int, p_depart: float, rng: np.random.Generator, slots: Optional[int] = None) -> int:
    """Number of cars still charging after one step of Bernoulli departures."""
    if occupied == 0 and slots is None:
        return 0
    return occupied - int(departure_mask(occupied, p_depart, rng, slots).sum())


def sample_exogenous(station: int, t: int, dow: int, model: ArrivalModel, rng: np.random.Generator) -> int:
    return int(rng.poisson(model.rate(station, t, dow)))


@dataclass
class StationResolution:
    n_arrive: int
    n_wait: int
    seated: list
    waiting: list
    seated_exogenous: int


def resolve_station(
    station: StationPhysical,
    occ: StationOccupancy,
    n_inc: int,
    arrivals: Sequence[InboundVehicle],
    t: int,
    stay_log: Optional[list] = None,
) -> StationResolution:
    """Seat the waiting queue, then arrivals, into the free chargers.

    ``occ.chargers`` must already reflect this step's departures. Recommended
    arrivals go before exogenous ones and, among themselves, by query id.
    Mutates ``occ`` and returns the dispatched-user accounting.
    """
    before = occ.occupied + len(occ.waiting) + n_inc + len(arrivals)
    free = station.capacity - occ.occupied
    if free < 0:
        raise InvariantError(f"station {station.id} over capacity before resolution")
    seated, seated_exo = [], 0

    while free > 0 and occ.waiting:
        w = occ.waiting.popleft()
        occ.chargers.append(Charging(w.query_id, t))
        if w.query_id is None:
            seated_exo += 1
        else:
            seated.append(w.query_id)
        if stay_log is not None:
            stay_log.append(("seat", station.id, w.query_id, w.since, t))
        free -= 1

    incoming = [WaitingVehicle(v.query_id, t) for v in sorted(arrivals, key=lambda v: v.query_id)]
    incoming += [WaitingVehicle(None, t) for _ in range(n_inc)]
    for w in incoming:
        if free > 0:
            occ.chargers.append(Charging(w.query_id, t))
            if w.query_id is None:
                seated_exo += 1
            else:
                seated.append(w.query_id)
            if stay_log is not None:
                stay_log.append(("seat", station.id, w.query_id, w.since, t))
            free -= 1
        else:
            occ.waiting.append(w)

    after = occ.occupied + len(occ.waiting)
    if after != before or occ.occupied > station.capacity:
        raise InvariantError(
            f"station {station.id} step {t}: {before} cars in, {after} out "
            f"(occupied {occ.occupied}/{station.capacity})"
        )
    if occ.waiting and occ.occupied != station.capacity:
        raise InvariantError(f"station {station.id} has a queue with free chargers")
    waiting_rec = [w.query_id for w in occ.waiting if w.query_id is not None]
    return StationResolution(len(seated), len(waiting_rec), seated, waiting_rec, seated_exo)


# -- world -------------------------------------------------------------------


@dataclass
class World:
    grid: GridSpec
    stations: list
    arrivals: ArrivalModel
    speed_km_per_step: float
    occupancy: list
    dow: int = 0
    distance_km: Optional[np.ndarray] = None  # station-to-station, for redirects
    stay_log: Optional[list] = None

    @classmethod
    def empty(cls, grid, stations, arrivals, speed_km_per_step, dow=0, initial_occupied=None, log_stays=False):
        occ = []
        for i, s in enumerate(stations):
            if s.id != i:
                raise ConfigError("station ids must be dense and ordered 0..N-1")
            n0 = 0 if initial_occupied is None else int(initial_occupied[i])
            if not 0 <= n0 <= s.capacity:
                raise ConfigError(f"station {i}: initial occupancy {n0} outside [0, {s.capacity}]")
            occ.append(StationOccupancy(chargers=[Charging(None, -1) for _ in range(n0)]))
        loc = np.array([[s.cell.row, s.cell.col] for s in stations], dtype=np.float64)
        dist = np.hypot(loc[:, None, 0] - loc[None, :, 0], loc[:, None, 1] - loc[None, :, 1]) * grid.cell_side_km
        return cls(grid, list(stations), arrivals, speed_km_per_step, occ, dow, dist, [] if log_stays else None)

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    def copy(self) -> "World":
        return copy.deepcopy(self)

    def occupied(self) -> np.ndarray:
        return np.array([o.occupied for o in self.occupancy], dtype=np.int64)

    def capacities(self) -> np.ndarray:
        return np.array([s.capacity for s in self.stations], dtype=np.int64)

    def open_chargers(self) -> np.ndarray:
        return self.capacities() - self.occupied()

    def waiting_counts(self) -> np.ndarray:
        return np.array([len(o.waiting) for o in self.occupancy], dtype=np.int64)

    def inbound(self):
        for o in self.occupancy:
            yield from o.inbound

    def n_inbound(self) -> int:
        return sum(len(o.inbound) for o in self.occupancy)


def advance_inbound(world: World) -> dict:
    """Move every dispatched vehicle one step; return arrivals by station id."""
    arrivals: dict = {}
    for sid, occ in enumerate(world.occupancy):
        still = []
        for v in occ.inbound:
            if v.remaining < 1:
                raise InvariantError(f"inbound vehicle {v.query_id} has remaining {v.remaining}")
            v.remaining -= 1
            if v.remaining == 0:
                arrivals.setdefault(sid, []).append(v)
            else:
                still.append(v)
        occ.inbound = still
    return arrivals


def _redirect_grouped(world: World, arrivals: dict, n_inc: list, t: int, acct: StepAccounting) -> None:
    """Send grouped arrivals facing a full station on to the nearest group member with room."""
    room = [
        s.capacity - world.occupancy[i].occupied - len(world.occupancy[i].waiting) - n_inc[i]
        for i, s in enumerate(world.stations)
    ]
    flat = sorted((v for vs in arrivals.values() for v in vs), key=lambda v: v.query_id)
    for v in flat:
        here = v.station
        if v.group is None or room[here] > 0:
            room[here] -= 1
            continue
        options = [m for m in v.group if m != here and room[m] > 0]
        if not options:
            room[here] -= 1
            continue
        dest = min(options, key=lambda m: (world.distance_km[here, m], m))
        steps = steps_for_distance(world.distance_km[here, dest], world.speed_km_per_step)
        arrivals[here].remove(v)
        if not arrivals[here]:
            del arrivals[here]
        leg = InboundVehicle(v.query_id, dest, steps, v.total + steps, v.dispatched, None)
        world.occupancy[dest].inbound.append(leg)
        room[dest] -= 1
        acct.redirected.append((v.query_id, here, dest, steps))


def world_step(world: World, recommendations: Sequence[Recommendation], t: int, streams: EpisodeStreams) -> StepAccounting:
    """Advance the world by one timestep in place and account for dispatched users."""
    acct = StepAccounting(t)
    model = world.arrivals
    n = world.n_stations
    for i, s in enumerate(world.stations):
        occ = world.occupancy[i]
        leaving = departure_mask(occ.occupied, model.p_depart, streams.departures, slots=s.capacity)
        if leaving.any():
            kept = []
            for car, gone in zip(occ.chargers, leaving):
                if gone:
                    if world.stay_log is not None:
                        world.stay_log.append(("depart", i, car.query_id, car.start, t))
                else:
                    kept.append(car)
            acct.departures += len(occ.chargers) - len(kept)
            occ.chargers = kept
    n_inc = [sample_exogenous(i, t, world.dow, model, streams.exogenous) for i in range(n)]
    acct.exogenous_arrivals = sum(n_inc)
    arrivals = advance_inbound(world)
    if any(v.group is not None for vs in arrivals.values() for v in vs):
        _redirect_grouped(world, arrivals, n_inc, t, acct)
    for i, s in enumerate(world.stations):
        here = arrivals.get(i, [])
        acct.arrived.extend(v.query_id for v in here)
        res = resolve_station(s, world.occupancy[i], n_inc[i], here, t, world.stay_log)
        acct.seated.extend(res.seated)
        acct.waiting.extend(res.waiting)
    for r in recommendations:
        if r.drive_steps < 1:
            raise InvariantError(f"recommendation for query {r.query_id} has drive_steps {r.drive_steps}")
        world.occupancy[r.station].inbound.append(
            InboundVehicle(r.query_id, r.station, r.drive_steps, r.drive_steps, t, r.group)
        )
    acct.driving = sorted(v.query_id for v in world.inbound())
    acct.n_arrive = len(acct.seated)
    acct.n_wait = len(acct.waiting)
    acct.n_drive = len(acct.driving)
    return acct
