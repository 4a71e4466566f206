import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chargerec.baselines import most_open, nearest, nearest_open

dists = st.lists(st.integers(0, 8).map(lambda x: x * 0.5), min_size=1, max_size=10)


def test_nearest_examples():
    assert nearest([3.0]) == 0
    assert nearest([2.0, 1.0]) == 1
    assert nearest([1.5, 0.5, 0.5]) == 1
    assert nearest([2.0, 1.0, 0.5], ids=[0, 1]) == 1
    with pytest.raises(ValueError):
        nearest([])


def test_most_open_examples():
    assert most_open([1.0, 2.0, 3.0], [0, 3, 1]) == 1
    assert most_open([2.0, 0.5, 1.0], [0, 0, 0]) == 1  # all full: nearest
    assert most_open([2.0, 0.5, 1.0], [2, 0, 2]) == 2  # tie on open count: nearer
    assert most_open([1.0, 1.0], [1, 1]) == 0


def test_nearest_open_examples():
    d = [0.5, 1.0, 1.5]
    assert nearest_open(d, [1, 1, 1], [0, 0, 0], [0, 1, 2]) == 0
    assert nearest_open(d, [0, 2, 1], [0, 0, 0], [0, 1, 2]) == 1
    assert nearest_open(d, [0, 0, 0], [0, 0, 0], [2, 1]) == 1  # all full: nearest candidate
    # one free charger already claimed by an earlier dispatch
    assert nearest_open(d, [1, 0, 1], [1, 0, 0], [0, 1, 2]) == 2
    with pytest.raises(ValueError):
        nearest_open(d, [1, 1, 1], [0, 0, 0], [])


@given(dists)
def test_nearest_minimizes_distance(d):
    s = nearest(d)
    assert all(d[s] <= x for x in d)
    assert s == min(i for i, x in enumerate(d) if x == min(d))


@given(st.data())
def test_baselines_return_members(data):
    d = data.draw(dists)
    n = len(d)
    opens = data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
    committed = data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
    cand = data.draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=n, unique=True))
    s = nearest_open(d, opens, committed, cand)
    assert s in cand
    free = [c for c in cand if opens[c] - committed[c] > 0]
    if free:
        assert opens[s] - committed[s] > 0 and d[s] == min(d[c] for c in free)
    else:
        assert d[s] == min(d[c] for c in cand)
    assert 0 <= most_open(d, opens) < n
    assert opens[most_open(d, opens)] == max(opens)
