"""Logistic propensity model fitted by iteratively reweighted least squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, OneClassPool, Separation, SingularDesign

EPS = 1e-12
# |linear predictor| beyond this means fitted probabilities within ~1e-13 of 0 or 1.
ETA_GUARD = 30.0
MAX_HALVINGS = 40


@dataclass(frozen=True, eq=False)
class PropensityModel:
    intercept: float
    coefficients: np.ndarray
    converged: bool = True
    iterations: int = 0
    score_sd: float = float("nan")
    logit_sd: float = float("nan")
    loglik_trace: tuple[float, ...] = ()

    @property
    def k(self) -> int:
        return len(self.coefficients)

    def linear_predictor(self, covariates) -> np.ndarray:
        x = np.asarray(covariates, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] != self.k:
            raise DimensionMismatch(f"model has {self.k} covariates, got {x.shape[1]}")
        return self.intercept + x @ self.coefficients

    def scores(self, covariates) -> np.ndarray:
        """Vectorised ``predict`` over the rows of a covariate matrix."""
        return _clamp(_sigmoid(self.linear_predictor(covariates)))

    def logits(self, covariates) -> np.ndarray:
        p = self.scores(covariates)
        return np.log(p) - np.log1p(-p)


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta, dtype=float)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(p, EPS, 1.0 - EPS)


def log_likelihood(design: np.ndarray, labels: np.ndarray, beta: np.ndarray) -> float:
    eta = design @ beta
    return float(np.sum(labels * eta - np.logaddexp(0.0, eta)))


def predict(model: PropensityModel, covariates) -> float:
    """Propensity score of a single covariate vector, clamped to [1e-12, 1 - 1e-12]."""
    x = np.asarray(covariates, dtype=float).reshape(-1)
    return float(model.scores(x)[0])


def fit_logistic(covariates, labels, max_iter: int = 100, tol: float = 1e-8) -> PropensityModel:
    """Maximum-likelihood logistic regression of ``labels`` on ``covariates``.

    Newton-Raphson (IRLS) with step halving, so the log-likelihood never
    decreases between iterations. Convergence is declared when the largest
    absolute coefficient change drops below ``tol``.

    Raises:
        OneClassPool: all labels identical.
        SingularDesign: the design matrix [1, X] is rank deficient.
        Separation: the data are (quasi-)separable, detected through a
            diverging linear predictor or a numerically singular Hessian.
    """
    x = np.asarray(covariates, dtype=float)
    y = np.asarray(labels, dtype=float).reshape(-1)
    if x.ndim == 1:
        x = x.reshape(len(y), -1)
    n, k = x.shape
    if n != len(y):
        raise DimensionMismatch("covariates and labels differ in length")
    if n == 0:
        raise OneClassPool("empty pool")
    if y.min() == y.max():
        raise OneClassPool("all labels are identical")
    if not np.isfinite(x).all():
        raise ValueError("covariates must be finite")

    design = np.column_stack([np.ones(n), x])
    if np.linalg.matrix_rank(design) < k + 1:
        raise SingularDesign("design matrix is rank deficient")

    beta = np.zeros(k + 1)
    beta[0] = np.log(y.mean() / (1.0 - y.mean()))
    ll = log_likelihood(design, y, beta)
    trace = [ll]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        eta = design @ beta
        p = _sigmoid(eta)
        w = p * (1.0 - p)
        hessian = design.T @ (design * w[:, None])
        gradient = design.T @ (y - p)
        try:
            chol = np.linalg.cholesky(hessian)
        except np.linalg.LinAlgError:
            raise Separation("Hessian is not positive definite") from None
        if np.linalg.cond(hessian) > 1e13:
            raise Separation("Hessian is numerically singular")
        step = np.linalg.solve(chol.T, np.linalg.solve(chol, gradient))

        t = 1.0
        for _ in range(MAX_HALVINGS):
            candidate = beta + t * step
            ll_new = log_likelihood(design, y, candidate)
            if ll_new >= ll:
                break
            t *= 0.5
        else:
            candidate, ll_new = beta, ll
        change = np.max(np.abs(candidate - beta))
        beta, ll = candidate, ll_new
        trace.append(ll)
        if np.max(np.abs(design @ beta)) > ETA_GUARD:
            raise Separation("linear predictor diverges; data look separable")
        if change < tol:
            converged = True
            break

    eta = design @ beta
    fitted = _clamp(_sigmoid(eta))
    logits = np.log(fitted) - np.log1p(-fitted)
    return PropensityModel(
        intercept=float(beta[0]),
        coefficients=beta[1:].copy(),
        converged=converged,
        iterations=iterations,
        score_sd=float(np.std(fitted, ddof=1)),
        logit_sd=float(np.std(logits, ddof=1)),
        loglik_trace=tuple(trace),
    )
