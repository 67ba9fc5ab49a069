"""Greedy one-to-one nearest-neighbour matching."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Metric = Callable[[np.ndarray, np.ndarray], np.ndarray]


def euclidean(point: np.ndarray, pool: np.ndarray) -> np.ndarray:
    """Distances from ``point`` to every row of ``pool``; for 1-D scores this is |a - b|."""
    diff = pool - point
    if diff.ndim == 1:
        return np.abs(diff)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


@dataclass(frozen=True)
class MatchResult:
    pairs: list[tuple[int, int, float]]
    unmatched_reference_ids: list[int]
    consumed_pool_ids: list[int]
    # Positions into the caller's reference / pool arrays, aligned with ``pairs``.
    reference_index: np.ndarray
    pool_index: np.ndarray

    @property
    def matched_reference_ids(self) -> list[int]:
        return [p[0] for p in self.pairs]


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    return arr


def greedy_nn_match(
    reference_ids,
    reference_points,
    pool_ids,
    pool_points,
    rng: np.random.Generator,
    caliper: Optional[float] = None,
    metric: Optional[Metric] = None,
    with_replacement: bool = False,
) -> MatchResult:
    """Match each reference unit to its nearest remaining pool unit.

    Reference units are sorted by id and then visited in the order of
    ``rng.permutation``; the result therefore depends only on the id/point
    sets and the generator state, not on input ordering. A reference unit whose
    nearest remaining neighbour lies beyond ``caliper`` stays unmatched and
    consumes nothing. Ties go to the lower pool id. Without replacement a
    consumed pool unit is removed from further consideration.

    Points are either 1-D arrays of scores or 2-D arrays of vectors.
    """
    metric = metric or euclidean
    ref_ids = np.asarray(reference_ids, dtype=np.int64)
    pool_ids_arr = np.asarray(pool_ids, dtype=np.int64)
    ref_pts = _as_points(reference_points)
    pool_pts = _as_points(pool_points)
    if len(np.intersect1d(ref_ids, pool_ids_arr)):
        raise ValueError("reference and pool ids must be disjoint")

    ref_order = np.argsort(ref_ids, kind="stable")
    pool_order = np.argsort(pool_ids_arr, kind="stable")
    sorted_pool_ids = pool_ids_arr[pool_order]
    sorted_pool_pts = pool_pts[pool_order]
    available = np.ones(len(pool_order), dtype=bool)
    visit = ref_order[rng.permutation(len(ref_order))]

    pairs: list[tuple[int, int, float]] = []
    unmatched: list[int] = []
    ref_index: list[int] = []
    pool_index: list[int] = []
    remaining = len(pool_order)
    for r in visit:
        if remaining == 0:
            unmatched.append(int(ref_ids[r]))
            continue
        dist = metric(ref_pts[r], sorted_pool_pts)
        if not with_replacement:
            dist = np.where(available, dist, np.inf)
        j = int(np.argmin(dist))
        d = float(dist[j])
        if caliper is not None and d > caliper:
            unmatched.append(int(ref_ids[r]))
            continue
        pairs.append((int(ref_ids[r]), int(sorted_pool_ids[j]), d))
        ref_index.append(int(r))
        pool_index.append(int(pool_order[j]))
        if not with_replacement:
            available[j] = False
            remaining -= 1

    consumed = list(dict.fromkeys(p[1] for p in pairs))
    return MatchResult(
        pairs=pairs,
        unmatched_reference_ids=unmatched,
        consumed_pool_ids=consumed,
        reference_index=np.asarray(ref_index, dtype=np.int64),
        pool_index=np.asarray(pool_index, dtype=np.int64),
    )
