import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import twin_quad
from twodpsm.core import DEFAULT_SCHEMES, MatchedQuad, Metric, Quad, Scheme, SchemeTag
from twodpsm.errors import GroupEmptied, MaxRoundsExceeded, OneClassPool, SchemeMismatch
from twodpsm.protocol import ProtocolConfig, apply_scheme, propensity_for_step, run_1d, run_2dpsm

TWO_D2 = ProtocolConfig(scheme=DEFAULT_SCHEMES[SchemeTag.TWO_D2])
TWO_D3 = ProtocolConfig(scheme=DEFAULT_SCHEMES[SchemeTag.TWO_D3])
ONE_D = ProtocolConfig(scheme=DEFAULT_SCHEMES[SchemeTag.ONE_D])

# 16 observations, one covariate, ids 0-3 BT, 4-7 BC, 8-11 AT, 12-15 AC.
TRACE_X = [1.83, -3.08, 0.96, 0.07, 1.32, 0.39, 1.83, 0.03,
           -0.22, 0.88, 0.73, -0.06, -0.25, 0.72, 0.7, -0.49]
TRACE_Y = [float(i) for i in range(16)]


def trace_quad():
    x = np.array(TRACE_X).reshape(-1, 1)
    y = np.array(TRACE_Y)
    spans = {"bt": range(0, 4), "bc": range(4, 8), "at": range(8, 12), "ac": range(12, 16)}
    return Quad.from_arrays(1, **{g: (list(r), x[list(r)], y[list(r)]) for g, r in spans.items()})


# -- independent trace oracle -------------------------------------------------

def _newton_logit(xs, labels):
    """Plain Newton iterations for a one-covariate logistic model."""
    a = math.log(sum(labels) / (len(labels) - sum(labels)))
    b = 0.0
    for _ in range(200):
        g0 = g1 = h00 = h01 = h11 = 0.0
        for x, y in zip(xs, labels):
            p = 1.0 / (1.0 + math.exp(-(a + b * x)))
            w = p * (1 - p)
            g0 += y - p
            g1 += (y - p) * x
            h00 += w
            h01 += w * x
            h11 += w * x * x
        det = h00 * h11 - h01 * h01
        da = (h11 * g0 - h01 * g1) / det
        db = (h00 * g1 - h01 * g0) / det
        a, b = a + da, b + db
        if max(abs(da), abs(db)) < 1e-13:
            break
    return lambda x: 1.0 / (1.0 + math.exp(-(a + b * x)))


def _sd(values):
    m = sum(values) / len(values)
    return math.sqrt(sum((v - m) ** 2 for v in values) / (len(values) - 1))


def trace_oracle(groups, caliper, seed, max_rounds=20):
    """Hand-style execution of rounds of steps (a)-(d) for a PSM/PSM scheme.

    ``groups`` maps label -> list of (id, x). Scores and widths are fitted on
    the survivors reaching each step in round 1 and reused; pairs from the
    previous round survive when both members are still present and within width.
    """
    rng = np.random.default_rng(seed)
    g = {k: list(v) for k, v in groups.items()}
    fitted, previous, all_pairs = {}, {}, []
    steps = [("a", "BT", "AT"), ("b", "BT", "BC"), ("c", "BC", "AC"), ("d", "AT", "AC")]
    for rnd in range(1, max_rounds + 1):
        for name, ref_label, pool_label in steps:
            ref, pool = g[ref_label], g[pool_label]
            if rnd == 1:
                score = _newton_logit([x for _, x in ref + pool], [1] * len(ref) + [0] * len(pool))
                width = caliper * _sd([score(x) for _, x in ref + pool])
                fitted[name] = (score, width)
            score, width = fitted[name]
            sref = {i: score(x) for i, x in ref}
            spool = {i: score(x) for i, x in pool}
            kept = []
            for i, _ in ref:
                j = previous.get(name, {}).get(i)
                if j in spool and j not in [p[1] for p in kept] and abs(sref[i] - spool[j]) <= width:
                    kept.append((i, j))
            used_ref = {p[0] for p in kept}
            free_pool = sorted(j for j in spool if j not in {p[1] for p in kept})
            free_ref = sorted(i for i in sref if i not in used_ref)
            order = [free_ref[k] for k in rng.permutation(len(free_ref))]
            new = []
            for i in order:
                if not free_pool:
                    continue
                j = min(free_pool, key=lambda c: (abs(sref[i] - spool[c]), c))
                if abs(sref[i] - spool[j]) <= width:
                    new.append((i, j))
                    free_pool.remove(j)
            found = kept + new
            if not found:
                raise GroupEmptied(f"{ref_label}/{pool_label}", rnd, name, "oracle")
            previous[name] = dict(found)
            refs, pools = {p[0] for p in found}, {p[1] for p in found}
            g[ref_label] = [u for u in ref if u[0] in refs]
            g[pool_label] = [u for u in pool if u[0] in pools]
            all_pairs += [(f"{ref_label}:{pool_label}", i, j, rnd) for i, j in found]
        if len({len(v) for v in g.values()}) == 1:
            return {k: sorted(i for i, _ in v) for k, v in g.items()}, all_pairs, rnd
    raise MaxRoundsExceeded("oracle")


def test_twod3_matches_trace_oracle():
    quad = trace_quad()
    result = run_2dpsm(quad, TWO_D3, np.random.default_rng(42))
    groups = {g.label.value: [(int(i), float(x[0])) for i, x in zip(g.ids, g.covariates)] for g in quad}
    expected, pairs, rounds = trace_oracle(groups, 1.0, 42)
    assert result.rounds_used == rounds
    assert {g.label.value: sorted(g.ids.tolist()) for g in result.groups} == expected
    assert [(p.tag, p.id_a, p.id_b, p.round) for p in result.pairs] == pairs


def test_exact_twins_match_in_one_round(rng):
    quad = twin_quad(rng.normal(size=(12, 3)))
    result = run_2dpsm(quad, TWO_D2, np.random.default_rng(0))
    assert isinstance(result, MatchedQuad)
    assert result.rounds_used == 1
    assert result.n_matched == 12
    assert all(p.distance == 0.0 for p in result.pairs)


def test_far_after_treated_group_empties(rng):
    x = rng.normal(size=(40, 2))
    quad = Quad.from_arrays(
        2, bt=(range(10), x[:10], np.zeros(10)), bc=(range(10, 20), x[10:20], np.zeros(10)),
        at=(range(20, 30), x[20:30] + 100, np.zeros(10)), ac=(range(30, 40), x[30:40], np.zeros(10)),
    )
    with pytest.raises(GroupEmptied) as info:
        run_2dpsm(quad, TWO_D2, np.random.default_rng(0))
    assert info.value.round == 1
    assert "BT" in info.value.group or "AT" in info.value.group


def test_deterministic_and_equal_sizes(rng):
    x = rng.normal(size=(400, 2))
    quad = Quad.from_arrays(
        2, bt=(range(100), x[:100] + 0.1, np.zeros(100)), bc=(range(100, 200), x[100:200], np.zeros(100)),
        at=(range(200, 300), x[200:300] + 0.3, np.zeros(100)), ac=(range(300, 400), x[300:400], np.zeros(100)),
    )
    a = run_2dpsm(quad, TWO_D2, np.random.default_rng(5))
    b = run_2dpsm(quad, TWO_D2, np.random.default_rng(5))
    assert a.pairs == b.pairs
    sizes = set(a.groups.sizes.values())
    assert len(sizes) == 1
    # survivors are subsets of the input and every final pair is one-to-one
    for before, after in zip(quad, a.groups):
        assert set(after.ids.tolist()) <= set(before.ids.tolist())
    alive = {int(i) for g in a.groups for i in g.ids}
    for tag in ("BT:AT", "BT:BC", "BC:AC", "AT:AC"):
        final = [p for p in a.final_pairs() if p.tag == tag and {p.id_a, p.id_b} <= alive]
        assert len({p.id_b for p in final}) == len({p.id_a for p in final}) == len(final)


def test_twod1_uses_mahalanobis(rng):
    x = rng.normal(size=(200, 2))
    quad = Quad.from_arrays(
        2, bt=(range(50), x[:50], np.zeros(50)), bc=(range(50, 100), x[50:100], np.zeros(50)),
        at=(range(100, 150), x[100:150], np.zeros(50)), ac=(range(150, 200), x[150:200], np.zeros(50)),
    )
    cfg = ProtocolConfig(scheme=DEFAULT_SCHEMES[SchemeTag.TWO_D1])
    result = run_2dpsm(quad, cfg, np.random.default_rng(1))
    assert len(set(result.groups.sizes.values())) == 1


def test_scheme_guards(rng):
    quad = twin_quad(rng.normal(size=(5, 2)))
    with pytest.raises(SchemeMismatch):
        run_2dpsm(quad, ONE_D)
    with pytest.raises(SchemeMismatch):
        run_1d(quad, TWO_D2)
    assert apply_scheme(quad, ProtocolConfig(scheme=DEFAULT_SCHEMES[SchemeTag.NAIVE])) is quad
    bad = ProtocolConfig(scheme=Scheme(SchemeTag.TWO_D2, 0.2, Metric.NONE, None))
    with pytest.raises(SchemeMismatch):
        run_2dpsm(quad, bad)
    with pytest.raises(GroupEmptied):
        run_2dpsm(quad.replace(ac=quad.ac.take([])), TWO_D2)


def test_run_1d_twins_and_before_prune(rng):
    x = rng.normal(size=(10, 2))
    result = run_1d(twin_quad(x), ONE_D, np.random.default_rng(0))
    assert result.groups.total == 40
    quad = Quad.from_arrays(
        2, bt=(range(10), x, np.zeros(10)), bc=(range(10, 20), x + 100, np.zeros(10)),
        at=(range(20, 30), x, np.zeros(10)), ac=(range(30, 40), x, np.zeros(10)),
    )
    with pytest.raises(GroupEmptied) as info:
        run_1d(quad, ONE_D, np.random.default_rng(0))
    assert info.value.step == "before"


def test_propensity_for_step(rng):
    quad = twin_quad(rng.normal(size=(30, 2)))
    model = propensity_for_step(quad.bt, quad.bc)
    assert np.max(np.abs(model.coefficients)) < 1e-8
    np.testing.assert_allclose(model.scores(quad.bt.covariates), 0.5, atol=1e-8)
    with pytest.raises(OneClassPool):
        propensity_for_step(quad.bt, quad.bc.take([]))


def test_with_replacement_mode_runs(rng):
    x = rng.normal(size=(80, 2))
    quad = Quad.from_arrays(
        2, bt=(range(20), x[:20], np.zeros(20)), bc=(range(20, 40), x[20:40], np.zeros(20)),
        at=(range(40, 60), x[40:60], np.zeros(20)), ac=(range(60, 80), x[60:80], np.zeros(20)),
    )
    cfg = ProtocolConfig(scheme=DEFAULT_SCHEMES[SchemeTag.TWO_D3], with_replacement=True)
    try:
        result = run_2dpsm(quad, cfg, np.random.default_rng(0))
    except MaxRoundsExceeded:
        return
    assert result.groups.total > 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([SchemeTag.TWO_D1, SchemeTag.TWO_D2, SchemeTag.TWO_D3]))
def test_survivors_shrink_monotonically(seed, tag):
    r = np.random.default_rng(seed)
    x = r.normal(size=(160, 2))
    x[80:120] += 0.5
    quad = Quad.from_arrays(
        2, bt=(range(40), x[:40], np.zeros(40)), bc=(range(40, 80), x[40:80], np.zeros(40)),
        at=(range(80, 120), x[80:120], np.zeros(40)), ac=(range(120, 160), x[120:160], np.zeros(40)),
    )
    try:
        result = run_2dpsm(quad, ProtocolConfig(scheme=DEFAULT_SCHEMES[tag]), np.random.default_rng(seed))
    except (GroupEmptied, MaxRoundsExceeded):
        return
    sizes = set(result.groups.sizes.values())
    assert len(sizes) == 1 and sizes.pop() <= 40
    # ids paired in round r were all still present after round r - 1
    alive_prev = {int(i) for g in quad for i in g.ids}
    for rnd in range(1, result.rounds_used + 1):
        ids = {i for p in result.pairs if p.round == rnd for i in (p.id_a, p.id_b)}
        assert ids <= alive_prev
        alive_prev = ids
    assert {int(i) for g in result.groups for i in g.ids} <= alive_prev
