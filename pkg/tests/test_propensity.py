import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twodpsm.errors import OneClassPool, Separation, SingularDesign
from twodpsm.propensity import PropensityModel, fit_logistic, log_likelihood, predict


def grid_search_mle(x, y, lo=-5.0, hi=5.0, step=1e-3):
    """Brute-force maximiser of the exact logistic log-likelihood over a square grid."""
    grid = np.round(np.arange(lo, hi + step / 2, step), 10)
    best = (-np.inf, None, None)
    for chunk in np.array_split(grid, 50):
        a = chunk[:, None, None]
        b = grid[None, :, None]
        eta = a + b * x[None, None, :]
        ll = np.sum(y * eta - np.logaddexp(0.0, eta), axis=2)
        i, j = np.unravel_index(np.argmax(ll), ll.shape)
        if ll[i, j] > best[0]:
            best = (ll[i, j], chunk[i], grid[j])
    return best[1], best[2]


def test_independent_labels_give_zero_model():
    m = fit_logistic([[1.0], [1.0], [-1.0], [-1.0]], [1, 0, 1, 0])
    assert m.converged
    assert abs(m.intercept) < 1e-10
    assert abs(m.coefficients[0]) < 1e-10


def test_matches_grid_search_oracle():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    y = np.array([0.0, 1.0, 0.0, 1.0])
    a, b = grid_search_mle(x, y)
    m = fit_logistic(x.reshape(-1, 1), y)
    assert abs(m.intercept - a) <= 1e-3
    assert abs(m.coefficients[0] - b) <= 1e-3


def test_separable_pool_raises():
    with pytest.raises(Separation):
        fit_logistic([[0.0], [1.0]], [0, 1])


def test_degenerate_pools():
    with pytest.raises(OneClassPool):
        fit_logistic([[0.0], [1.0]], [1, 1])
    with pytest.raises(SingularDesign):
        fit_logistic([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [1.0, 1.0]], [0, 1, 0, 1])


def test_predict_examples():
    zero = PropensityModel(0.0, np.zeros(2))
    assert predict(zero, [3.0, -7.0]) == 0.5
    m = PropensityModel(-1.0, np.array([2.0]))
    assert abs(predict(m, [1.0]) - 0.731059) < 1e-6
    big = PropensityModel(100.0, np.array([0.0]))
    assert predict(big, [5.0]) == 1 - 1e-12


def test_mean_shift_gives_positive_coefficient(rng):
    a = rng.normal(size=(200, 2))
    b = rng.normal(size=(200, 2))
    a[:, 1] += 2.0
    m = fit_logistic(np.vstack([a, b]), np.r_[np.ones(200), np.zeros(200)])
    assert m.coefficients[1] > 1.0
    assert abs(m.coefficients[0]) < m.coefficients[1]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(20, 120))
def test_loglik_monotone_and_gradient_zero(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    y = (rng.random(n) < 1 / (1 + np.exp(-(0.3 + x[:, 0])))).astype(float)
    if y.min() == y.max():
        return
    try:
        m = fit_logistic(x, y)
    except Separation:
        return
    assert np.all(np.diff(m.loglik_trace) >= -1e-12)
    design = np.column_stack([np.ones(n), x])
    beta = np.r_[m.intercept, m.coefficients]
    p = 1 / (1 + np.exp(-(design @ beta)))
    assert np.max(np.abs(design.T @ (y - p))) < 1e-6
    assert log_likelihood(design, y, beta) == pytest.approx(m.loglik_trace[-1])
    s = m.scores(x)
    assert np.all((s >= 1e-12) & (s <= 1 - 1e-12))
