import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chargerec.errors import ConfigError, GridBoundsError
from chargerec.geo import (
    MIN_CANDIDATES, CandidateTable, CellCoord, GridSpec, candidate_stations, cell_distance, drive_time,
    steps_for_distance,
)
from chargerec.sim import StationPhysical

GRID = GridSpec(20, 20, 0.5)
cells = st.builds(CellCoord, st.integers(0, 19), st.integers(0, 19))


def stations_at(*rc):
    return [StationPhysical(i, CellCoord(r, c), 2) for i, (r, c) in enumerate(rc)]


def test_grid_validation():
    with pytest.raises(ConfigError):
        GridSpec(0, 3)
    with pytest.raises(ConfigError):
        GridSpec(3, 3, 0.0)
    assert GridSpec(1, 1).cell_side_km == 0.5


def test_distance_examples():
    assert cell_distance(CellCoord(0, 0), CellCoord(0, 0), GRID) == 0.0
    assert cell_distance(CellCoord(0, 0), CellCoord(3, 4), GRID) == pytest.approx(2.5)
    assert cell_distance(CellCoord(0, 0), CellCoord(0, 1), GRID) == pytest.approx(0.5)


def test_out_of_bounds_cell():
    with pytest.raises(GridBoundsError):
        cell_distance(CellCoord(0, 0), CellCoord(20, 0), GRID)
    with pytest.raises(GridBoundsError):
        cell_distance(CellCoord(-1, 0), CellCoord(0, 0), GRID)


def test_drive_time_examples():
    one_km = GridSpec(10, 10, 1.0)
    assert drive_time(CellCoord(2, 2), CellCoord(2, 2), one_km, 1.0) == 1
    assert steps_for_distance(2.5, 1.0) == 3
    assert steps_for_distance(2.0, 1.0) == 2
    assert drive_time(CellCoord(0, 0), CellCoord(0, 2), one_km, 1.0) == 2
    # 0.5 km cells: (0,0)->(3,4) is 2.5 km
    assert drive_time(CellCoord(0, 0), CellCoord(3, 4), GRID, 1.0) == 3


def test_drive_time_rejects_bad_speed():
    with pytest.raises(ConfigError):
        drive_time(CellCoord(0, 0), CellCoord(1, 1), GRID, 0.0)
    with pytest.raises(ConfigError):
        steps_for_distance(1.0, -2.0)


def test_exact_multiples_do_not_round_up():
    # 0.1 * 3 is 0.30000000000000004 in floating point
    assert steps_for_distance(0.1 * 3, 0.1) == 3


@given(cells, cells, cells)
def test_distance_metric_laws(a, b, c):
    ab, ba = cell_distance(a, b, GRID), cell_distance(b, a, GRID)
    assert ab == ba
    assert (ab == 0) == (a == b)
    assert cell_distance(a, c, GRID) <= ab + cell_distance(b, c, GRID) + 1e-12


@given(st.floats(0, 50), st.floats(0, 50), st.floats(0.1, 5))
def test_drive_time_monotone(d1, d2, speed):
    lo, hi = sorted((d1, d2))
    assert 1 <= steps_for_distance(lo, speed) <= steps_for_distance(hi, speed)


def test_candidates_within_radius_sorted():
    # seven stations within 3 km of the origin cell, one far away
    sts = stations_at((0, 5), (0, 1), (1, 1), (2, 0), (0, 3), (4, 0), (1, 2), (19, 19))
    got = candidate_stations(CellCoord(0, 0), sts, 3.0, GRID)
    assert got == [1, 2, 3, 6, 4, 5, 0]


def test_candidates_fallback_to_five_nearest():
    sts = stations_at((0, 1), (1, 0), (10, 10), (12, 12), (15, 15), (19, 19), (8, 8), (5, 19), (19, 0))
    got = candidate_stations(CellCoord(0, 0), sts, 1.0, GRID)
    assert len(got) == MIN_CANDIDATES == 5
    d = [cell_distance(CellCoord(0, 0), s.cell, GRID) for s in sts]
    assert got == sorted(range(9), key=lambda i: (d[i], i))[:5]


def test_candidates_fewer_than_five_stations():
    sts = stations_at((10, 10), (15, 2), (19, 19))
    assert sorted(candidate_stations(CellCoord(0, 0), sts, 0.1, GRID)) == [0, 1, 2]


def test_candidate_ties_by_id():
    sts = stations_at((0, 2), (2, 0), (0, 1))
    assert candidate_stations(CellCoord(0, 0), sts, 5.0, GRID) == [2, 0, 1]


def test_candidates_need_stations():
    with pytest.raises(ConfigError):
        candidate_stations(CellCoord(0, 0), [], 3.0, GRID)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 19), st.integers(0, 19)), min_size=1, max_size=12), cells, st.floats(0.0, 6.0))
def test_candidate_properties(locs, q, radius):
    sts = stations_at(*locs)
    got = candidate_stations(q, sts, radius, GRID)
    d = [cell_distance(q, s.cell, GRID) for s in sts]
    assert got and len(set(got)) == len(got)
    assert len(got) >= min(MIN_CANDIDATES, len(sts))
    assert [d[i] for i in got] == sorted(d[i] for i in got)
    within = [i for i in range(len(sts)) if d[i] <= radius]
    if len(within) >= MIN_CANDIDATES:
        assert sorted(got) == within


def test_candidate_table_matches_direct_computation():
    sts = stations_at((2, 3), (10, 10), (17, 4), (5, 15), (12, 1), (0, 19))
    table = CandidateTable(sts, GRID, 3.0, 2.0)
    for cell in (CellCoord(0, 0), CellCoord(10, 11), CellCoord(19, 19)):
        assert list(table.candidates(cell)) == candidate_stations(cell, sts, 3.0, GRID)
        for s in sts:
            assert table.distance_km[cell.row, cell.col, s.id] == pytest.approx(cell_distance(cell, s.cell, GRID))
            assert table.drive_steps[cell.row, cell.col, s.id] == drive_time(cell, s.cell, GRID, 2.0)
