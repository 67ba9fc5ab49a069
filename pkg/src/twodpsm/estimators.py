"""Difference-in-differences estimators of the effect on the treated."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Union

import numpy as np

from .core import MatchedQuad, Quad
from .errors import EmptyGroup, RankDeficientDesign

Z95 = 1.959964


@dataclass(frozen=True)
class Estimate:
    satt: float
    se: float
    ci_low: float
    ci_high: float
    d0: float
    d1: float
    n_used: int

    @classmethod
    def from_point(cls, satt: float, se: float, d0: float, d1: float, n_used: int) -> "Estimate":
        return cls(satt, se, satt - Z95 * se, satt + Z95 * se, d0, d1, n_used)

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Estimate":
        return cls(**json.loads(text))


def _quad(groups) -> Quad:
    return groups.groups if hasattr(groups, "groups") else groups


def diff_in_means_did(groups: Union[Quad, MatchedQuad]) -> Estimate:
    """(mean AT - mean AC) - (mean BT - mean BC), SE from four independent means.

    A group of size one contributes zero variance.
    """
    quad = _quad(groups)
    means, var_terms = {}, 0.0
    for g in quad:
        if len(g) == 0:
            raise EmptyGroup(f"group {g.label.value} is empty")
        means[g.label.value] = float(g.outcomes.mean())
        if len(g) > 1:
            var_terms += float(g.outcomes.var(ddof=1)) / len(g)
    d0 = means["BT"] - means["BC"]
    d1 = means["AT"] - means["AC"]
    return Estimate.from_point(d1 - d0, math.sqrt(var_terms), d0, d1, quad.total)


def naive_did(quad: Quad) -> Estimate:
    """Unmatched difference in means; identical to ``diff_in_means_did``."""
    return diff_in_means_did(quad)


def did_design(quad: Quad, include_covariates: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Stack the four groups into columns [1, treated, after, treated*after, x1..xk]."""
    rows, ys = [], []
    for g in quad:
        n = len(g)
        treated = float(g.label.treated)
        after = float(int(g.label.period))
        cols = [np.ones(n), np.full(n, treated), np.full(n, after), np.full(n, treated * after)]
        if include_covariates:
            cols += list(g.covariates.T)
        rows.append(np.column_stack(cols) if n else np.empty((0, len(cols))))
        ys.append(g.outcomes)
    return np.vstack(rows), np.concatenate(ys)


def regression_did(groups, include_covariates: bool = True) -> Estimate:
    """OLS of Y on [1, T, A, T*A, X]; the effect is the T*A coefficient.

    The standard error is the classical homoskedastic one. ``d0``/``d1`` hold
    the raw group mean differences for reference.
    """
    quad = _quad(groups)
    for g in quad:
        if len(g) == 0:
            raise EmptyGroup(f"group {g.label.value} is empty")
    x, y = did_design(quad, include_covariates)
    n, p = x.shape
    if n <= p or np.linalg.matrix_rank(x) < p:
        raise RankDeficientDesign("rank-deficient design")
    q, r = np.linalg.qr(x)
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - x @ beta
    sigma2 = float(resid @ resid) / (n - p)
    r_inv = np.linalg.solve(r, np.eye(p))
    se = math.sqrt(sigma2 * float(r_inv[3] @ r_inv[3]))
    d0 = float(quad.bt.outcomes.mean() - quad.bc.outcomes.mean())
    d1 = float(quad.at.outcomes.mean() - quad.ac.outcomes.mean())
    return Estimate.from_point(float(beta[3]), se, d0, d1, n)
