"""Distances between subjects and caliper widths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateScores, DimensionMismatch, SingularCovariance


@dataclass(frozen=True, eq=False)
class MahalanobisContext:
    pooled_covariance: np.ndarray
    inverse: np.ndarray
    pool_size: int
    # Lower Cholesky factor of ``inverse``; whitening by it turns the metric Euclidean.
    whitener: np.ndarray

    @property
    def k(self) -> int:
        return self.pooled_covariance.shape[0]

    def whiten(self, points) -> np.ndarray:
        """Map rows to a space where Euclidean distance equals Mahalanobis distance."""
        x = np.asarray(points, dtype=float)
        if x.shape[-1] != self.k:
            raise DimensionMismatch(f"expected {self.k} covariates, got {x.shape[-1]}")
        return x @ self.whitener


def covariance_context(cov) -> MahalanobisContext:
    """Context for a known covariance matrix (no pooling)."""
    cov = np.asarray(cov, dtype=float)
    return _context(cov, pool_size=0)


def _context(cov: np.ndarray, pool_size: int) -> MahalanobisContext:
    k = cov.shape[0]
    if cov.shape != (k, k) or not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
        raise SingularCovariance("covariance must be a symmetric square matrix")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise SingularCovariance("covariance is not positive definite") from None
    # Guard near-singular matrices that Cholesky still accepts.
    if np.linalg.cond(cov) > 1e12:
        raise SingularCovariance("covariance is numerically singular")
    chol_inv = np.linalg.solve(chol, np.eye(k))  # L^-1, so cov^-1 = L^-T L^-1
    inverse = chol_inv.T @ chol_inv
    inverse = (inverse + inverse.T) / 2
    return MahalanobisContext(cov, inverse, pool_size, chol_inv.T)


def pooled_covariance(group_a, group_b) -> MahalanobisContext:
    """Sample covariance (n - 1 denominator) of the union of two groups of covariate rows."""
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    union = np.vstack([a.reshape(len(a), -1), b.reshape(len(b), -1)])
    n, k = union.shape
    if n < k + 2:
        raise SingularCovariance(f"need at least {k + 2} rows to pool, got {n}")
    cov = np.atleast_2d(np.cov(union, rowvar=False, ddof=1))
    return _context(cov, pool_size=n)


def mahalanobis(x, y, ctx: MahalanobisContext) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(x) != ctx.k or len(y) != ctx.k:
        raise DimensionMismatch(f"expected vectors of length {ctx.k}")
    d = x - y
    return float(np.sqrt(max(d @ ctx.inverse @ d, 0.0)))


def ps_distance(score_i: float, score_j: float) -> float:
    return abs(score_i - score_j)


def caliper_width(scores, multiplier: float) -> float:
    """``multiplier`` times the sample SD of ``scores``."""
    s = np.asarray(scores, dtype=float).reshape(-1)
    if len(s) < 2:
        raise ValueError("need at least two scores")
    if not multiplier > 0:
        raise ValueError("multiplier must be positive")
    sd = float(np.std(s, ddof=1))
    if sd == 0.0:
        raise DegenerateScores("all scores identical; caliper would be zero")
    return multiplier * sd
