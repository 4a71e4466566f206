"""Rule-based recommenders.

All three take distances (km) indexed by station id; equal distances are
resolved toward the lower id.
"""

from __future__ import annotations

import numpy as np


def _by_distance(distances, ids):
    return sorted(ids, key=lambda s: (distances[s], s))


def nearest(distances, ids=None) -> int:
    """The closest station."""
    distances = np.asarray(distances)
    if distances.size == 0:
        raise ValueError("no stations")
    ids = range(distances.size) if ids is None else ids
    return int(_by_distance(distances, ids)[0])


def most_open(distances, open_counts) -> int:
    """Station with the most open chargers; ties go to the nearer one, then the lower id."""
    distances = np.asarray(distances)
    open_counts = np.asarray(open_counts)
    return int(min(range(distances.size), key=lambda s: (-open_counts[s], distances[s], s)))


def nearest_open(distances, open_counts, committed, candidates) -> int:
    """Nearest candidate with a charger not already claimed by a dispatched car.

    ``committed`` counts cars this recommender has already sent that have not
    arrived yet. When every candidate is claimed the nearest candidate is
    returned.
    """
    ranked = _by_distance(distances, [int(c) for c in candidates])
    if not ranked:
        raise ValueError("empty candidate set")
    for s in ranked:
        if open_counts[s] - committed[s] > 0:
            return s
    return ranked[0]
