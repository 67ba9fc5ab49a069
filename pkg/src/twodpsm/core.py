"""Domain types: observations, the four-group partition, matched samples, schemes.

A dataset of repeated cross-sections splits into four groups::

    BT  before, treated (catchment area)     AT  after, treated
    BC  before, control                      AC  after, control

Groups are stored column-wise (ids, covariate matrix, outcomes) because every
downstream step works on whole groups at once. ``Observation`` is the row view
used at the I/O boundary.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .errors import DuplicateId, RaggedCovariates


class Period(enum.IntEnum):
    BEFORE = 0
    AFTER = 1


class GroupLabel(str, enum.Enum):
    BT = "BT"
    BC = "BC"
    AT = "AT"
    AC = "AC"

    @property
    def treated(self) -> bool:
        return self in (GroupLabel.BT, GroupLabel.AT)

    @property
    def period(self) -> Period:
        return Period.BEFORE if self in (GroupLabel.BT, GroupLabel.BC) else Period.AFTER

    @classmethod
    def of(cls, treated: bool, period: Period) -> "GroupLabel":
        if period == Period.BEFORE:
            return cls.BT if treated else cls.BC
        return cls.AT if treated else cls.AC


GROUP_ORDER = (GroupLabel.BT, GroupLabel.BC, GroupLabel.AT, GroupLabel.AC)


@dataclass(frozen=True)
class Observation:
    """One survey respondent."""

    id: int
    covariates: tuple[float, ...]
    treated: bool
    period: Period
    outcome: float

    @property
    def group(self) -> GroupLabel:
        return GroupLabel.of(self.treated, self.period)


@dataclass(frozen=True, eq=False)
class Group:
    """Column-wise storage for the members of one of the four groups."""

    label: GroupLabel
    ids: np.ndarray
    covariates: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x.reshape(len(ids), -1) if len(ids) else x.reshape(0, 0)
        y = np.asarray(self.outcomes, dtype=float).reshape(-1)
        if x.shape[0] != len(ids) or len(y) != len(ids):
            raise RaggedCovariates(f"group {self.label.value}: column lengths disagree")
        for arr in (ids, x, y):
            arr.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "outcomes", y)

    @classmethod
    def empty(cls, label: GroupLabel, k: int) -> "Group":
        return cls(label, np.empty(0, np.int64), np.empty((0, k)), np.empty(0))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def k(self) -> int:
        return self.covariates.shape[1]

    def take(self, index) -> "Group":
        """Subset by integer positions or boolean mask, preserving order."""
        index = np.asarray(index)
        if index.size == 0 and index.dtype != bool:
            index = index.astype(np.int64)
        return Group(self.label, self.ids[index], self.covariates[index], self.outcomes[index])

    def select_ids(self, ids: Iterable[int]) -> "Group":
        wanted = np.fromiter(ids, dtype=np.int64)
        return self.take(np.isin(self.ids, wanted))

    def sorted_by_id(self) -> "Group":
        return self.take(np.argsort(self.ids, kind="stable"))

    def observations(self) -> list[Observation]:
        treated, period = self.label.treated, self.label.period
        return [
            Observation(int(i), tuple(float(v) for v in x), treated, period, float(y))
            for i, x, y in zip(self.ids, self.covariates, self.outcomes)
        ]


@dataclass(frozen=True)
class Quad:
    bt: Group
    bc: Group
    at: Group
    ac: Group

    def __iter__(self) -> Iterator[Group]:
        return iter((self.bt, self.bc, self.at, self.ac))

    def __getitem__(self, label: GroupLabel | str) -> Group:
        return getattr(self, GroupLabel(label).value.lower())

    @property
    def k(self) -> int:
        return self.bt.k

    @property
    def sizes(self) -> dict[GroupLabel, int]:
        return {g.label: len(g) for g in self}

    @property
    def total(self) -> int:
        return sum(len(g) for g in self)

    def replace(self, **groups: Group) -> "Quad":
        fields = {g.label.value.lower(): g for g in self}
        fields.update(groups)
        return Quad(**fields)

    def observations(self) -> list[Observation]:
        return [obs for g in self for obs in g.observations()]

    @classmethod
    def from_arrays(cls, k: int, **groups) -> "Quad":
        """Build from ``bt=(ids, X, y)``-style keyword tuples; missing groups are empty."""
        built = {}
        for label in GROUP_ORDER:
            key = label.value.lower()
            if key in groups:
                ids, x, y = groups[key]
                built[key] = Group(label, ids, np.asarray(x, float).reshape(len(ids), k), y)
            else:
                built[key] = Group.empty(label, k)
        return cls(**built)


class Pair(NamedTuple):
    tag: str  # "BT:AT", "BT:BC", "BC:AC" or "AT:AC"
    id_a: int
    id_b: int
    distance: float
    round: int


@dataclass(frozen=True)
class MatchedQuad:
    """Equal-size matched groups plus the pairs that produced them."""

    groups: Quad
    pairs: tuple[Pair, ...]
    rounds_used: int

    @property
    def n_matched(self) -> int:
        return len(self.groups.bt)

    @property
    def total(self) -> int:
        return self.groups.total

    def final_pairs(self) -> list[Pair]:
        return [p for p in self.pairs if p.round == self.rounds_used]


class SchemeTag(str, enum.Enum):
    NAIVE = "naive"
    ONE_D = "1d"
    TWO_D1 = "2d-1"
    TWO_D2 = "2d-2"
    TWO_D3 = "2d-3"

    @property
    def display(self) -> str:
        return {"naive": "Naive", "1d": "1D"}.get(self.value, self.value.upper())


class Metric(str, enum.Enum):
    NONE = "none"
    PSM = "psm"
    MDM = "mdm"


@dataclass(frozen=True)
class Scheme:
    """Matching specification; calipers are multiples of the score SD."""

    tag: SchemeTag
    cross_sectional_caliper: Optional[float] = None
    longitudinal_metric: Metric = Metric.NONE
    longitudinal_caliper: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "tag", SchemeTag(self.tag))
        object.__setattr__(self, "longitudinal_metric", Metric(self.longitudinal_metric))
        for name in ("cross_sectional_caliper", "longitudinal_caliper"):
            value = getattr(self, name)
            if value is not None and not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a positive finite multiplier, got {value!r}")

    @property
    def two_dimensional(self) -> bool:
        return self.tag in (SchemeTag.TWO_D1, SchemeTag.TWO_D2, SchemeTag.TWO_D3)


DEFAULT_SCHEMES: dict[SchemeTag, Scheme] = {
    SchemeTag.NAIVE: Scheme(SchemeTag.NAIVE),
    SchemeTag.ONE_D: Scheme(SchemeTag.ONE_D, 0.2),
    SchemeTag.TWO_D1: Scheme(SchemeTag.TWO_D1, 1.0, Metric.MDM, None),
    SchemeTag.TWO_D2: Scheme(SchemeTag.TWO_D2, 0.2, Metric.PSM, 0.2),
    SchemeTag.TWO_D3: Scheme(SchemeTag.TWO_D3, 1.0, Metric.PSM, 1.0),
}


def partition(dataset: Sequence[Observation], k: Optional[int] = None) -> Quad:
    """Split observations into the BT/BC/AT/AC groups.

    The covariate dimension is taken from the first observation (or ``k`` for an
    empty dataset) and enforced on the rest. Within each group, input order is kept.
    """
    if not dataset:
        return Quad.from_arrays(k or 0)
    k = len(dataset[0].covariates)
    seen: set[int] = set()
    buckets: dict[GroupLabel, list[Observation]] = {label: [] for label in GROUP_ORDER}
    for obs in dataset:
        if obs.id in seen:
            raise DuplicateId(f"id {obs.id} appears more than once")
        seen.add(obs.id)
        if len(obs.covariates) != k:
            raise RaggedCovariates(
                f"id {obs.id} has {len(obs.covariates)} covariates, expected {k}"
            )
        buckets[obs.group].append(obs)
    groups = {}
    for label, members in buckets.items():
        if members:
            groups[label.value.lower()] = Group(
                label,
                [o.id for o in members],
                np.array([o.covariates for o in members], dtype=float).reshape(len(members), k),
                [o.outcome for o in members],
            )
        else:
            groups[label.value.lower()] = Group.empty(label, k)
    return Quad(**groups)


def validate_quad(quad: Quad) -> list[str]:
    """Return human-readable problems with ``quad``; an empty list means well-formed."""
    issues: list[str] = []
    k = quad.k
    seen: dict[int, str] = {}
    for group in quad:
        name = group.label.value
        if len(group) == 0:
            issues.append(f"empty group {name}")
            continue
        if group.k != k:
            issues.append(f"group {name} has {group.k} covariates, expected {k}")
        for i in group.ids.tolist():
            if i in seen:
                issues.append(f"id {i} appears in both {seen[i]} and {name}")
            seen[i] = name
        bad_x = ~np.isfinite(group.covariates).all(axis=1)
        for i in group.ids[bad_x].tolist():
            issues.append(f"non-finite covariate for id {i} in {name}")
        for i in group.ids[~np.isfinite(group.outcomes)].tolist():
            issues.append(f"non-finite outcome for id {i} in {name}")
    return issues
