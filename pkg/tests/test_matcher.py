import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twodpsm.matcher import greedy_nn_match


def replay_oracle(reference, pool, seed, caliper=None):
    """Enumerate every visit order, pick the one a seeded shuffle yields, and replay it."""
    ids = sorted(reference)
    perm = np.random.default_rng(seed).permutation(len(ids)).tolist()
    chosen = None
    for order in itertools.permutations(range(len(ids))):
        if list(order) == perm:
            chosen = [ids[i] for i in order]
    assert chosen is not None
    free = dict(pool)
    pairs, unmatched = [], []
    for rid in chosen:
        if not free:
            unmatched.append(rid)
            continue
        best = min(sorted(free), key=lambda pid: abs(reference[rid] - free[pid]))
        d = abs(reference[rid] - free[best])
        if caliper is not None and d > caliper:
            unmatched.append(rid)
            continue
        pairs.append((rid, best, d))
        del free[best]
    return pairs, unmatched


def run(reference, pool, seed, caliper=None):
    return greedy_nn_match(
        list(reference), list(reference.values()), list(pool), list(pool.values()),
        np.random.default_rng(seed), caliper=caliper,
    )


def test_unique_nearest_neighbour():
    res = run({1: 0.5}, {2: 0.4, 3: 0.45}, seed=0)
    assert res.pairs[0][:2] == (1, 3)
    assert res.pairs[0][2] == pytest.approx(0.05)


def test_caliper_prune_leaves_pool_untouched():
    res = run({1: 0.5}, {2: 0.9}, seed=0, caliper=0.2)
    assert res.pairs == [] and res.unmatched_reference_ids == [1]
    assert res.consumed_pool_ids == []


@pytest.mark.parametrize("seed", range(8))
def test_seeded_replay_oracle_fixture(seed):
    reference = {1: 0.1, 2: 0.2, 3: 0.9}
    pool = {4: 0.15, 5: 0.85, 6: 0.5}
    res = run(reference, pool, seed)
    pairs, unmatched = replay_oracle(reference, pool, seed)
    assert res.pairs == pairs
    assert res.unmatched_reference_ids == unmatched


@settings(max_examples=80, deadline=None)
@given(
    st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=5),
    st.lists(st.floats(0, 1, allow_nan=False), min_size=0, max_size=5),
    st.integers(0, 1000),
    st.one_of(st.none(), st.floats(0.01, 0.5)),
)
def test_replay_oracle_random(ref_scores, pool_scores, seed, caliper):
    reference = {i: s for i, s in enumerate(ref_scores)}
    pool = {100 + i: s for i, s in enumerate(pool_scores)}
    res = run(reference, pool, seed, caliper)
    pairs, unmatched = replay_oracle(reference, pool, seed, caliper)
    assert res.pairs == pairs
    assert res.unmatched_reference_ids == unmatched
    # one-to-one, within caliper, every reference accounted for
    assert len({p[1] for p in res.pairs}) == len(res.pairs)
    assert len(res.pairs) + len(res.unmatched_reference_ids) == len(reference)
    if caliper is not None:
        assert all(p[2] <= caliper for p in res.pairs)


def test_input_order_does_not_matter(rng):
    ref = rng.random(8)
    pool = rng.random(12)
    a = greedy_nn_match(np.arange(8), ref, np.arange(8, 20), pool, np.random.default_rng(1))
    perm = rng.permutation(8)
    b = greedy_nn_match(np.arange(8)[perm], ref[perm], np.arange(8, 20), pool, np.random.default_rng(1))
    assert a.pairs == b.pairs


def test_vectors_with_replacement_and_indices():
    ref = np.array([[0.0, 0.0], [0.1, 0.0]])
    pool = np.array([[5.0, 5.0], [0.0, 0.05]])
    res = greedy_nn_match([1, 2], ref, [10, 11], pool, np.random.default_rng(0), with_replacement=True)
    assert {p[1] for p in res.pairs} == {11}
    assert sorted(res.pool_index.tolist()) == [1, 1]
    with pytest.raises(ValueError):
        greedy_nn_match([1], [0.0], [1], [0.0], np.random.default_rng(0))
