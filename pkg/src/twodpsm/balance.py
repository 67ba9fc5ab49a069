"""Standardised-difference balance diagnostics for the four group comparisons."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, TextIO, Union

import numpy as np

from .core import GroupLabel, MatchedQuad, Quad
from .errors import DegenerateSamples

DEFAULT_THRESHOLD = 0.10

# Cross-sectional comparisons first, then longitudinal.
COMPARISONS = (
    (GroupLabel.BT, GroupLabel.BC),
    (GroupLabel.AT, GroupLabel.AC),
    (GroupLabel.BT, GroupLabel.AT),
    (GroupLabel.BC, GroupLabel.AC),
)


def comparison_name(pair: tuple[GroupLabel, GroupLabel]) -> str:
    return f"{pair[0].value}:{pair[1].value}"


def standardized_difference(sample_t, sample_c) -> float:
    """|mean_t - mean_c| / sqrt((s_t^2 + s_c^2) / 2) with n - 1 variances."""
    t = np.asarray(sample_t, dtype=float)
    c = np.asarray(sample_c, dtype=float)
    if len(t) < 2 or len(c) < 2:
        raise ValueError("both samples need at least two values")
    diff = abs(t.mean() - c.mean())
    pooled = np.sqrt((t.var(ddof=1) + c.var(ddof=1)) / 2.0)
    if pooled == 0.0:
        if diff == 0.0:
            return 0.0
        raise DegenerateSamples("both samples are constant but their means differ")
    return float(diff / pooled)


def _column_deltas(xt: np.ndarray, xc: np.ndarray) -> np.ndarray:
    return np.array([standardized_difference(xt[:, j], xc[:, j]) for j in range(xt.shape[1])])


@dataclass(frozen=True)
class BalanceEntry:
    comparison: str
    covariate: int  # 1-based, matching x1..xk
    delta: float
    balanced: bool


@dataclass(frozen=True)
class BalanceReport:
    entries: tuple[BalanceEntry, ...]
    threshold: float = DEFAULT_THRESHOLD

    def deltas(self, comparison: str) -> np.ndarray:
        return np.array([e.delta for e in self.entries if e.comparison == comparison])

    def median(self, comparison: str) -> float:
        return float(np.median(self.deltas(comparison)))

    @property
    def all_balanced(self) -> bool:
        return all(e.balanced for e in self.entries)

    def as_matrix(self) -> np.ndarray:
        """Deltas shaped (comparison, covariate) in ``COMPARISONS`` order."""
        return np.vstack([self.deltas(comparison_name(c)) for c in COMPARISONS])

    def write_csv(self, handle: TextIO) -> None:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["comparison", "covariate", "delta", "balanced"])
        for e in self.entries:
            writer.writerow([e.comparison, f"x{e.covariate}", repr(e.delta), str(e.balanced).lower()])


def balance_report(
    groups: Union[Quad, MatchedQuad], threshold: float = DEFAULT_THRESHOLD
) -> BalanceReport:
    quad = groups.groups if hasattr(groups, "groups") else groups
    entries: list[BalanceEntry] = []
    for pair in COMPARISONS:
        a, b = quad[pair[0]], quad[pair[1]]
        for j, delta in enumerate(_column_deltas(a.covariates, b.covariates), start=1):
            entries.append(
                BalanceEntry(comparison_name(pair), j, float(delta), bool(delta <= threshold))
            )
    return BalanceReport(tuple(entries), threshold)


def summarize_medians(reports: Iterable[BalanceReport]) -> dict[str, float]:
    """Median delta per comparison, pooled over several reports."""
    reports = list(reports)
    out = {}
    for pair in COMPARISONS:
        name = comparison_name(pair)
        out[name] = float(np.median(np.concatenate([r.deltas(name) for r in reports])))
    return out
