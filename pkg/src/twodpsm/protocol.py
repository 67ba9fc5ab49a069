"""Two-dimensional matching protocol over the BT/BC/AT/AC groups.

Each round runs four greedy matching steps, each on the survivors of the
previous ones:

    (a) BT -> AT   longitudinal metric
    (b) BT -> BC   propensity score
    (c) BC -> AC   longitudinal metric
    (d) AT -> AC   propensity score

The reference (first-named) group is visited in random order and draws from the
pool group. Survivors of a step are the matched reference units and the
consumed pool units. Rounds repeat until the four groups have equal size.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Optional, Union

import numpy as np

from . import distance
from .core import DEFAULT_SCHEMES, Group, MatchedQuad, Metric, Pair, Quad, Scheme, SchemeTag
from .errors import (
    DegenerateScores,
    GroupEmptied,
    MaxRoundsExceeded,
    OneClassPool,
    SchemeMismatch,
    Separation,
    SingularCovariance,
)
from .matcher import greedy_nn_match
from .propensity import PropensityModel, fit_logistic

log = logging.getLogger(__name__)

CaliperScale = Literal["probability", "logit"]


@dataclass(frozen=True)
class ProtocolConfig:
    scheme: Scheme = field(default_factory=lambda: DEFAULT_SCHEMES[SchemeTag.TWO_D2])
    max_rounds: int = 20
    seed: int = 0
    caliper_scale: CaliperScale = "probability"
    with_replacement: bool = False
    # False: each step keeps the scores and caliper width fitted in round 1.
    refit_each_round: bool = False
    # True: from round 2 on, pairs whose members both survived are kept and only
    # units that lost their partner are re-matched.
    keep_pairs: bool = True

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.caliper_scale not in ("probability", "logit"):
            raise ValueError(f"unknown caliper scale {self.caliper_scale!r}")


@dataclass(frozen=True)
class SlicedMatch:
    """Cross-sectional-only matching: before and after slices matched independently."""

    groups: Quad
    pairs: tuple[Pair, ...]
    rounds_used: int = 1

    @property
    def total(self) -> int:
        return self.groups.total


def propensity_for_step(group_a: Group, group_b: Group, round_: int = 1) -> PropensityModel:
    """Logistic fit on the union of two groups; label is membership in ``group_a``."""
    if len(group_a) == 0 or len(group_b) == 0:
        raise OneClassPool(
            f"cannot fit {group_a.label.value} vs {group_b.label.value}: a group is empty"
        )
    x = np.vstack([group_a.covariates, group_b.covariates])
    labels = np.r_[np.ones(len(group_a)), np.zeros(len(group_b))]
    return fit_logistic(x, labels)


@dataclass(frozen=True, eq=False)
class StepContext:
    """How one step scores its units: a propensity model or a Mahalanobis context."""

    metric: Metric
    model: Optional[PropensityModel] = None
    mahalanobis: Optional[distance.MahalanobisContext] = None
    width: Optional[float] = None

    def points(self, group: Group, scale: CaliperScale) -> np.ndarray:
        if self.metric == Metric.MDM:
            return self.mahalanobis.whiten(group.covariates)
        if scale == "logit":
            return self.model.logits(group.covariates)
        return self.model.scores(group.covariates)


def _fit_step(
    ref: Group, pool: Group, metric: Metric, caliper: Optional[float],
    config: ProtocolConfig, round_: int, step: str,
) -> StepContext:
    tag = f"{ref.label.value}/{pool.label.value}"
    try:
        if metric == Metric.MDM:
            ctx = distance.pooled_covariance(ref.covariates, pool.covariates)
            return StepContext(metric, mahalanobis=ctx, width=caliper)
        model = propensity_for_step(ref, pool, round_)
        context = StepContext(metric, model=model)
        if caliper is None:
            return context
        both = np.r_[context.points(ref, config.caliper_scale),
                     context.points(pool, config.caliper_scale)]
        try:
            width = distance.caliper_width(both, caliper)
        except DegenerateScores:
            # A flat score cannot tell the groups apart; only exact ties may pair.
            width = 0.0
        return StepContext(metric, model=model, width=width)
    except Separation as exc:
        raise GroupEmptied(tag, round_, step, str(exc)) from exc
    except SingularCovariance as exc:
        # Collinear input is a data error; a covariance that only breaks once
        # survivors have dwindled means the groups ran out of observations.
        if round_ == 1 and len(ref) + len(pool) >= 4 * (ref.k + 2):
            raise
        raise GroupEmptied(tag, round_, step, str(exc)) from exc


def _step(
    ref: Group,
    pool: Group,
    context: StepContext,
    config: ProtocolConfig,
    rng: np.random.Generator,
    round_: int,
    step: str,
    previous: Optional[dict[int, int]] = None,
) -> tuple[Group, Group, list[Pair]]:
    """One greedy matching step; ``previous`` maps ref id -> pool id pairs to keep."""
    tag = f"{ref.label.value}:{pool.label.value}"
    ref_pts = context.points(ref, config.caliper_scale)
    pool_pts = context.points(pool, config.caliper_scale)

    kept_ref = np.zeros(len(ref), dtype=bool)
    kept_pool = np.zeros(len(pool), dtype=bool)
    pairs: list[Pair] = []
    if previous:
        pool_pos = {int(i): j for j, i in enumerate(pool.ids.tolist())}
        for r, rid in enumerate(ref.ids.tolist()):
            j = pool_pos.get(previous.get(rid, -1))
            if j is None or kept_pool[j]:
                continue
            d = float(np.linalg.norm(np.atleast_1d(ref_pts[r] - pool_pts[j])))
            if context.width is None or d <= context.width:
                kept_ref[r] = kept_pool[j] = True
                pairs.append(Pair(tag, rid, int(pool.ids[j]), d, round_))

    free_ref, free_pool = np.flatnonzero(~kept_ref), np.flatnonzero(~kept_pool)
    if config.with_replacement:
        free_pool = np.arange(len(pool))
    result = greedy_nn_match(
        ref.ids[free_ref], ref_pts[free_ref], pool.ids[free_pool], pool_pts[free_pool], rng,
        caliper=context.width, with_replacement=config.with_replacement,
    )
    pairs += [Pair(tag, a, b, d, round_) for a, b, d in result.pairs]
    if not pairs:
        raise GroupEmptied(tag.replace(":", "/"), round_, step, "no pair within caliper")
    kept_ref[free_ref[result.reference_index]] = True
    kept_pool[free_pool[result.pool_index]] = True
    log.debug("round %d step %s %s: %d of %d matched (caliper %s)",
              round_, step, tag, len(pairs), len(ref), context.width)
    return ref.take(kept_ref), pool.take(kept_pool), pairs


def _require_nonempty(quad: Quad) -> None:
    for g in quad:
        if len(g) == 0:
            raise GroupEmptied(g.label.value, 0, "input", "group is empty before matching")


def run_2dpsm(
    quad: Quad, config: ProtocolConfig, rng: Optional[np.random.Generator] = None
) -> MatchedQuad:
    """Run the iterative four-group matching until group sizes agree.

    Raises:
        SchemeMismatch: the scheme is not one of the two-dimensional ones.
        GroupEmptied: a step left a group without survivors.
        MaxRoundsExceeded: sizes still differ after ``config.max_rounds`` rounds.
    """
    scheme = config.scheme
    if not scheme.two_dimensional:
        raise SchemeMismatch(f"run_2dpsm needs a 2D scheme, got {scheme.tag.value}")
    _require_nonempty(quad)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    longitudinal = scheme.longitudinal_metric
    if longitudinal == Metric.NONE:
        raise SchemeMismatch("2D schemes need a longitudinal metric")
    lcal, xcal = scheme.longitudinal_caliper, scheme.cross_sectional_caliper

    bt, bc, at, ac = quad.bt, quad.bc, quad.at, quad.ac
    pairs: list[Pair] = []
    contexts: dict[str, StepContext] = {}

    previous: dict[str, dict[int, int]] = {}

    def step(name, ref, pool, metric, caliper, r):
        if r == 1 or config.refit_each_round:
            contexts[name] = _fit_step(ref, pool, metric, caliper, config, r, name)
        keep = previous.get(name) if config.keep_pairs else None
        ref, pool, found = _step(ref, pool, contexts[name], config, rng, r, name, keep)
        previous[name] = {p.id_a: p.id_b for p in found}
        return ref, pool, found

    for r in range(1, config.max_rounds + 1):
        bt, at, p_a = step("a", bt, at, longitudinal, lcal, r)
        bt, bc, p_b = step("b", bt, bc, Metric.PSM, xcal, r)
        bc, ac, p_c = step("c", bc, ac, longitudinal, lcal, r)
        at, ac, p_d = step("d", at, ac, Metric.PSM, xcal, r)
        pairs += p_a + p_b + p_c + p_d
        if len(bt) == len(bc) == len(at) == len(ac):
            return MatchedQuad(Quad(bt, bc, at, ac), tuple(pairs), r)
    raise MaxRoundsExceeded(
        f"group sizes still unequal after {config.max_rounds} rounds "
        f"(BT={len(bt)}, BC={len(bc)}, AT={len(at)}, AC={len(ac)})"
    )


def run_1d(
    quad: Quad, config: ProtocolConfig, rng: Optional[np.random.Generator] = None
) -> SlicedMatch:
    """Propensity matching within each period only (BT -> BC, AT -> AC)."""
    scheme = config.scheme
    if scheme.tag != SchemeTag.ONE_D:
        raise SchemeMismatch(f"run_1d needs the 1d scheme, got {scheme.tag.value}")
    _require_nonempty(quad)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    cal = scheme.cross_sectional_caliper
    before = _fit_step(quad.bt, quad.bc, Metric.PSM, cal, config, 1, "before")
    bt, bc, p_before = _step(quad.bt, quad.bc, before, config, rng, 1, "before")
    after = _fit_step(quad.at, quad.ac, Metric.PSM, cal, config, 1, "after")
    at, ac, p_after = _step(quad.at, quad.ac, after, config, rng, 1, "after")
    return SlicedMatch(Quad(bt, bc, at, ac), tuple(p_before + p_after))


def apply_scheme(
    quad: Quad, config: ProtocolConfig, rng: Optional[np.random.Generator] = None
) -> Union[Quad, SlicedMatch, MatchedQuad]:
    """Dispatch on the scheme tag; the naive scheme returns ``quad`` untouched."""
    tag = config.scheme.tag
    if tag == SchemeTag.NAIVE:
        _require_nonempty(quad)
        return quad
    if tag == SchemeTag.ONE_D:
        return run_1d(quad, config, rng)
    return run_2dpsm(quad, config, rng)
