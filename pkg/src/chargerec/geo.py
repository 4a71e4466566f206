"""City grid: cell distances, drive times and candidate-station selection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, GridBoundsError

# Guards ceil() against float noise such as 2.0000000000000004 km / 1 km/step.
_CEIL_TOL = 1e-9

MIN_CANDIDATES = 5


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    cell_side_km: float = 0.5

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        if not self.cell_side_km > 0:
            raise ConfigError(f"cell_side_km must be positive, got {self.cell_side_km}")

    @property
    def cell_area_km2(self) -> float:
        return self.cell_side_km ** 2

    @property
    def diagonal_km(self) -> float:
        return math.hypot(self.rows - 1, self.cols - 1) * self.cell_side_km

    def contains(self, cell: CellCoord) -> bool:
        return 0 <= cell.row < self.rows and 0 <= cell.col < self.cols

    def check(self, cell: CellCoord) -> None:
        if not self.contains(cell):
            raise GridBoundsError(f"{cell} outside {self.rows}x{self.cols} grid")


@dataclass(frozen=True, order=True)
class CellCoord:
    row: int
    col: int


def cell_distance(a: CellCoord, b: CellCoord, spec: GridSpec) -> float:
    """Euclidean distance in km between the centers of two cells."""
    spec.check(a)
    spec.check(b)
    return math.hypot(a.row - b.row, a.col - b.col) * spec.cell_side_km


def steps_for_distance(distance_km: float, speed_km_per_step: float) -> int:
    if not speed_km_per_step > 0:
        raise ConfigError(f"speed must be positive, got {speed_km_per_step}")
    return max(1, math.ceil(distance_km / speed_km_per_step - _CEIL_TOL))


def drive_time(a: CellCoord, b: CellCoord, spec: GridSpec, speed_km_per_step: float) -> int:
    """Drive time in whole timesteps, never less than one."""
    return steps_for_distance(cell_distance(a, b, spec), speed_km_per_step)


def candidate_stations(q: CellCoord, stations: Sequence, max_km: float, spec: GridSpec) -> list[int]:
    """Station ids a query may be routed to, nearest first.

    Every station within ``max_km`` qualifies. When fewer than five do, the
    five nearest overall are returned instead (all of them if there are fewer
    than five stations). Equal distances are ordered by station id.
    """
    if len(stations) == 0:
        raise ConfigError("candidate_stations needs at least one station")
    ranked = sorted((cell_distance(q, s.cell, spec), s.id) for s in stations)
    within = [sid for d, sid in ranked if d <= max_km]
    if len(within) >= MIN_CANDIDATES:
        return within
    return [sid for _, sid in ranked[:MIN_CANDIDATES]]


class CandidateTable:
    """Per-cell cache of candidate sets and distances for a fixed station layout.

    Queries are issued on grid cells, so every lookup the simulator needs can
    be precomputed once per scenario.
    """

    def __init__(self, stations: Sequence, spec: GridSpec, max_km: float, speed_km_per_step: float):
        if len(stations) == 0:
            raise ConfigError("CandidateTable needs at least one station")
        self.spec = spec
        self.max_km = max_km
        self.speed = speed_km_per_step
        n = len(stations)
        rows = np.arange(spec.rows)[:, None, None]
        cols = np.arange(spec.cols)[None, :, None]
        srow = np.array([s.cell.row for s in stations])[None, None, :]
        scol = np.array([s.cell.col for s in stations])[None, None, :]
        self._ids = np.array([s.id for s in stations])
        # hypot on integer offsets matches cell_distance bit for bit
        self.distance_km = np.hypot(rows - srow, cols - scol) * spec.cell_side_km
        self.drive_steps = np.maximum(
            1, np.ceil(self.distance_km / speed_km_per_step - _CEIL_TOL)
        ).astype(np.int64)
        self._candidates: dict[tuple[int, int], np.ndarray] = {}
        self._n = n
        self._stations = list(stations)

    def distances(self, cell: CellCoord) -> np.ndarray:
        """Distance in km from ``cell`` to every station, indexed by position."""
        return self.distance_km[cell.row, cell.col]

    def candidates(self, cell: CellCoord) -> np.ndarray:
        key = (cell.row, cell.col)
        found = self._candidates.get(key)
        if found is None:
            self.spec.check(cell)
            found = np.array(candidate_stations(cell, self._stations, self.max_km, self.spec), dtype=np.int64)
            self._candidates[key] = found
        return found
