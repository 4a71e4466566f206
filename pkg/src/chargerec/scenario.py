"""Scenario files: station layout, demand tables, and query generation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError
from .geo import CandidateTable, CellCoord, GridSpec
from .sim import DAYS_PER_WEEK, ArrivalModel, StationPhysical, World

SCENARIO_FORMAT = 1
STEP_MINUTES = 15
STEPS_PER_DAY = 24 * 60 // STEP_MINUTES


@dataclass(frozen=True)
class Query:
    id: int
    cell: CellCoord
    step: int


@dataclass
class QueryModel:
    """Query counts are Poisson with mean ``rate[bin, dow]``; locations follow a hotspot mixture.

    A non-empty ``script`` of ``[step, row, col]`` entries replaces the random
    demand with exactly those queries (used by tiny enumerable instances).
    """

    rate: np.ndarray
    hotspots: list = field(default_factory=list)  # [row, col, sigma_cells, weight]
    background: float = 1.0
    script: list = field(default_factory=list)

    def __post_init__(self):
        self.rate = np.asarray(self.rate, dtype=np.float64)
        if self.rate.ndim != 2 or self.rate.shape[1] != DAYS_PER_WEEK:
            raise ConfigError("query rate must have shape (bins, 7)")
        if (self.rate < 0).any():
            raise ConfigError("query rates must be non-negative")
        if self.background < 0 or any(h[2] <= 0 or h[3] < 0 for h in self.hotspots):
            raise ConfigError("hotspot sigma must be positive and weights non-negative")
        self.script = sorted([int(v) for v in e] for e in self.script)
        if any(len(e) != 3 or e[0] < 0 for e in self.script):
            raise ConfigError("query script entries must be [step >= 0, row, col]")

    def cell_probabilities(self, grid: GridSpec) -> np.ndarray:
        r = np.arange(grid.rows)[:, None]
        c = np.arange(grid.cols)[None, :]
        w = np.full((grid.rows, grid.cols), float(self.background))
        for row, col, sigma, weight in self.hotspots:
            w = w + weight * np.exp(-((r - row) ** 2 + (c - col) ** 2) / (2.0 * sigma ** 2))
        total = w.sum()
        if not total > 0:
            raise ConfigError("query location weights sum to zero")
        return (w / total).ravel()


@dataclass
class Scenario:
    name: str
    grid: GridSpec
    stations: list
    arrivals: ArrivalModel
    queries: QueryModel
    speed_km_per_step: float = 2.0
    episode_steps: int = STEPS_PER_DAY
    initial_occupied: Optional[list] = None
    description: str = ""

    def __post_init__(self):
        if not self.stations:
            raise ConfigError("scenario has no stations")
        for i, s in enumerate(self.stations):
            if s.id != i:
                raise ConfigError("station ids must be dense and ordered 0..N-1")
            self.grid.check(s.cell)
        for _, row, col in self.queries.script:
            self.grid.check(CellCoord(row, col))
        if self.arrivals.exogenous_rate.shape[0] != len(self.stations):
            raise ConfigError("exogenous rate table must have one row per station")
        for table, what in ((self.arrivals.exogenous_rate.shape[1], "exogenous"), (self.queries.rate.shape[0], "query")):
            if table * self.arrivals.steps_per_bin < self.episode_steps:
                raise ConfigError(f"{what} rate table does not cover {self.episode_steps} steps")
        if not self.speed_km_per_step > 0:
            raise ConfigError("speed_km_per_step must be positive")
        if self.episode_steps < 1:
            raise ConfigError("episode_steps must be >= 1")
        if self.initial_occupied is not None and len(self.initial_occupied) != len(self.stations):
            raise ConfigError("initial_occupied must list one value per station")
        self._cell_p = self.queries.cell_probabilities(self.grid)
        self._tables: dict = {}

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    def capacities(self) -> np.ndarray:
        return np.array([s.capacity for s in self.stations], dtype=np.int64)

    def candidate_table(self, max_km: float) -> CandidateTable:
        table = self._tables.get(max_km)
        if table is None:
            table = CandidateTable(self.stations, self.grid, max_km, self.speed_km_per_step)
            self._tables[max_km] = table
        return table

    def make_world(self, dow: int = 0, log_stays: bool = False) -> World:
        return World.empty(
            self.grid, self.stations, self.arrivals, self.speed_km_per_step,
            dow=dow, initial_occupied=self.initial_occupied, log_stays=log_stays,
        )

    def generate_queries(self, t: int, dow: int, rng: np.random.Generator, first_id: int = 0) -> list:
        if self.queries.script:
            cells = [(r, c) for step, r, c in self.queries.script if step == t]
            return [Query(first_id + j, CellCoord(r, c), t) for j, (r, c) in enumerate(cells)]
        b = t // self.arrivals.steps_per_bin
        count = int(rng.poisson(self.queries.rate[b, dow]))
        if count == 0:
            return []
        cells = rng.choice(self._cell_p.size, size=count, p=self._cell_p)
        cols = self.grid.cols
        return [Query(first_id + j, CellCoord(int(c) // cols, int(c) % cols), t) for j, c in enumerate(cells)]

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": SCENARIO_FORMAT,
            "name": self.name,
            "description": self.description,
            "grid": {"rows": self.grid.rows, "cols": self.grid.cols, "cell_side_km": self.grid.cell_side_km},
            "stations": [{"id": s.id, "row": s.cell.row, "col": s.cell.col, "capacity": s.capacity} for s in self.stations],
            "p_depart": self.arrivals.p_depart,
            "steps_per_bin": self.arrivals.steps_per_bin,
            "exogenous_rate": self.arrivals.exogenous_rate.tolist(),
            "query_rate": self.queries.rate.tolist(),
            "query_hotspots": [list(h) for h in self.queries.hotspots],
            "query_background": self.queries.background,
            "query_script": [list(e) for e in self.queries.script],
            "speed_km_per_step": self.speed_km_per_step,
            "episode_steps": self.episode_steps,
            "initial_occupied": None if self.initial_occupied is None else list(self.initial_occupied),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            if d.get("format_version", SCENARIO_FORMAT) != SCENARIO_FORMAT:
                raise ConfigError(f"unsupported scenario format {d.get('format_version')}")
            grid = GridSpec(int(d["grid"]["rows"]), int(d["grid"]["cols"]), float(d["grid"].get("cell_side_km", 0.5)))
            stations = [StationPhysical(int(s["id"]), CellCoord(int(s["row"]), int(s["col"])), int(s["capacity"])) for s in d["stations"]]
            arrivals = ArrivalModel(float(d["p_depart"]), np.array(d["exogenous_rate"], dtype=np.float64), int(d.get("steps_per_bin", 4)))
            queries = QueryModel(np.array(d["query_rate"], dtype=np.float64), [list(h) for h in d.get("query_hotspots", [])], float(d.get("query_background", 1.0)), [list(e) for e in d.get("query_script", [])])
            return cls(
                name=d.get("name", "scenario"),
                grid=grid,
                stations=stations,
                arrivals=arrivals,
                queries=queries,
                speed_km_per_step=float(d.get("speed_km_per_step", 2.0)),
                episode_steps=int(d.get("episode_steps", STEPS_PER_DAY)),
                initial_occupied=d.get("initial_occupied"),
                description=d.get("description", ""),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ConfigError(f"malformed scenario: {exc!r}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Scenario":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"scenario file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scenario {p} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


def bundled(name: str) -> Scenario:
    """Load a scenario shipped with the package (``desk`` or ``micro``)."""
    ref = resources.files("chargerec") / "data" / f"{name}.json"
    return Scenario.from_dict(json.loads(ref.read_text()))


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("chargerec") / "data" / f"{name}.json"))


# -- desk scenario -------------------------------------------------------------

def _daily_profile(hours: np.ndarray) -> np.ndarray:
    """Relative demand by hour: quiet nights, a morning and a stronger evening peak."""
    morning = np.exp(-0.5 * ((hours - 9.0) / 1.8) ** 2)
    evening = 1.2 * np.exp(-0.5 * ((hours - 18.0) / 2.2) ** 2)
    return 0.15 + morning + evening


def build_desk_scenario(seed: int = 7) -> Scenario:
    """The 15-station reference scenario shipped as ``data/desk.json``.

    A dense, under-supplied downtown sits around cell (10, 10) and saturates
    at the evening peak; suburban and ring stations have spare chargers two
    or three cells further out. Regenerating
    with the default seed reproduces the shipped file exactly.
    """
    rng = np.random.default_rng(seed)
    grid = GridSpec(20, 20, 0.5)
    layout = [
        # downtown: small, busy stations
        (9, 9, 4), (10, 12, 5), (12, 10, 4), (8, 11, 5), (11, 8, 4),
        # ring
        (5, 6, 8), (6, 14, 7), (14, 6, 7), (15, 14, 8), (10, 16, 6),
        # suburbs: large and quiet
        (2, 2, 10), (3, 17, 9), (17, 3, 9), (18, 17, 10), (1, 10, 8),
    ]
    stations = [StationPhysical(i, CellCoord(r, c), cap) for i, (r, c, cap) in enumerate(layout)]
    p_depart = 0.1
    hours = np.arange(24) + 0.5
    profile = _daily_profile(hours)
    dow_factor = np.array([1.0, 1.0, 1.0, 1.05, 1.1, 0.85, 0.8])
    # peak exogenous load as a fraction of each station's service rate p * capacity
    load = np.array([1.15, 1.1, 1.15, 1.05, 1.1, 0.75, 0.7, 0.7, 0.65, 0.7, 0.45, 0.45, 0.45, 0.4, 0.5])
    load = load * rng.uniform(0.95, 1.05, size=load.size)
    base = load * p_depart * np.array([s.capacity for s in stations]) / profile.max()
    exo = base[:, None, None] * profile[None, :, None] * dow_factor[None, None, :]
    query_rate = 4.0 * profile[:, None] * dow_factor[None, :] / profile.max()
    hotspots = [[10.0, 10.0, 3.0, 6.0], [5.0, 13.0, 3.0, 1.5], [14.0, 7.0, 3.0, 1.5]]
    initial = [int(math.floor(0.6 * s.capacity)) for s in stations]
    return Scenario(
        name="desk",
        grid=grid,
        stations=stations,
        arrivals=ArrivalModel(p_depart, np.round(exo, 6), steps_per_bin=4),
        queries=QueryModel(np.round(query_rate, 6), hotspots, background=0.4),
        speed_km_per_step=2.0,
        episode_steps=STEPS_PER_DAY,
        initial_occupied=initial,
        description="15 stations, 4-10 chargers, 20x20 grid of 0.5 km cells; downtown saturates at the evening peak",
    )


def build_micro_scenario() -> Scenario:
    """Two stations, three scripted queries, six steps: small enough to enumerate.

    Station 0 (1 charger, occupied) sits next to all three queries; station 1
    (2 chargers, one free) is a few steps away, so routing trades drive time
    against waiting for the near charger to free up.
    """
    return Scenario(
        name="micro",
        grid=GridSpec(4, 8, 0.5),
        stations=[StationPhysical(0, CellCoord(1, 1), 1), StationPhysical(1, CellCoord(2, 6), 2)],
        arrivals=ArrivalModel(0.3, np.zeros((2, 2, DAYS_PER_WEEK)), steps_per_bin=4),
        queries=QueryModel(np.zeros((2, DAYS_PER_WEEK)), [], 1.0, [[0, 1, 0], [1, 1, 2], [1, 2, 1]]),
        speed_km_per_step=1.0,
        episode_steps=6,
        initial_occupied=[1, 1],
        description="2 stations, 3 scripted queries, 6 steps; every routing plan can be enumerated",
    )
