import pickle
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import _oracles
from sdipe.errors import DomainError, SeparationError, SeparationWarning, SingularDesignError
from sdipe.numstat import (
    FittedLinearModel,
    RngStream,
    draw_linear_posterior,
    expit,
    fit_logistic,
    fit_ols,
    logit,
)


# --- links -----------------------------------------------------------------


def test_expit_examples():
    assert expit(0.0) == 0.5
    assert abs(expit(logit(0.2)) - 0.2) < 1e-12
    v = expit(40.0)
    assert 1 - 1e-12 < v <= 1.0


@pytest.mark.parametrize("bad", [np.inf, -np.inf, np.nan])
def test_expit_rejects_non_finite(bad):
    with pytest.raises(DomainError):
        expit(bad)


def test_logit_examples():
    assert logit(0.5) == 0.0
    assert logit(0.8) == pytest.approx(-logit(0.2), abs=1e-14)
    assert abs(logit(expit(1.3)) - 1.3) < 1e-12


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5, np.nan])
def test_logit_domain(bad):
    with pytest.raises(DomainError):
        logit(bad)


@given(st.floats(min_value=1e-9, max_value=1 - 1e-9))
def test_expit_logit_round_trip(p):
    assert abs(expit(logit(p)) - p) < 1e-12


@given(st.floats(-30, 30), st.floats(-30, 30))
def test_logit_strictly_increasing(x1, x2):
    p1, p2 = expit(x1), expit(x2)
    if 0 < p1 < p2 < 1:
        assert logit(p1) < logit(p2)


# --- OLS -------------------------------------------------------------------


def test_ols_mean_model():
    fit = fit_ols(np.ones((3, 1)), [1.0, 2.0, 3.0])
    assert fit.coefficients[0] == pytest.approx(2.0, abs=1e-14)
    assert fit.residual_variance == pytest.approx(1.0, abs=1e-14)
    assert fit.degrees_of_freedom == 2


@pytest.mark.parametrize("n", [3, 7, 50])
def test_ols_exact_line(n):
    x = np.linspace(-2, 5, n)
    fit = fit_ols(np.column_stack([np.ones(n), x]), 3 + 2 * x)
    np.testing.assert_allclose(fit.coefficients, [3.0, 2.0], atol=1e-12)
    assert fit.residual_variance == pytest.approx(0.0, abs=1e-24)


def _normal_equations(X, y):
    # independent oracle: explicit inverse of X'X
    return np.linalg.inv(X.T @ X) @ (X.T @ y)


def test_ols_matches_normal_equations():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(20, 3))
    y = rng.normal(size=20)
    fit = fit_ols(X, y)
    np.testing.assert_allclose(fit.coefficients, _normal_equations(X, y), atol=1e-8)
    np.testing.assert_allclose(fit.design_crossprod_inverse, np.linalg.inv(X.T @ X), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(5, 60), st.integers(1, 4))
def test_ols_residuals_orthogonal_and_invariants(seed, n, k):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))]) if k > 1 else np.ones((n, 1))
    y = rng.normal(size=n) * 3 + 1
    fit = fit_ols(X, y)
    r = y - X @ fit.coefficients
    assert np.abs(X.T @ r).max() < 1e-8 * n
    V = fit.design_crossprod_inverse
    assert np.abs(V - V.T).max() < 1e-10
    assert np.linalg.eigvalsh(V).min() >= -1e-8
    assert fit.residual_variance >= 0
    assert fit.degrees_of_freedom == n - k > 0
    L = fit.crossprod_inverse_root
    np.testing.assert_allclose(L @ L.T, V, atol=1e-10)


def test_ols_rank_deficiency_names_column():
    rng = np.random.default_rng(1)
    x = rng.normal(size=10)
    X = np.column_stack([np.ones(10), x, 2 * x, rng.normal(size=10)])
    with pytest.raises(SingularDesignError) as info:
        fit_ols(X, rng.normal(size=10), column_names=["intercept", "x", "x2", "u"])
    assert info.value.column == "x2"
    assert "x2" in str(info.value)


def test_ols_requires_more_rows_than_columns():
    with pytest.raises(SingularDesignError):
        fit_ols(np.eye(3), np.ones(3))


# --- logistic --------------------------------------------------------------


def test_logistic_intercept_only_closed_form():
    labels = np.array([1] * 25 + [0] * 75)
    fit = fit_logistic(np.ones((100, 1)), labels)
    assert fit.converged
    assert fit.coefficients[0] == pytest.approx(logit(0.25), abs=1e-6)


def test_logistic_null_slope():
    rng = np.random.default_rng(3)
    n = 20_000
    x = rng.normal(size=n)
    a = (rng.random(n) < 0.3).astype(float)
    X = np.column_stack([np.ones(n), x])
    fit = fit_logistic(X, a)
    p = fit.predict_proba(X)
    cov = np.linalg.inv(X.T @ (X * (p * (1 - p))[:, None]))
    assert abs(fit.coefficients[1]) < 3 * np.sqrt(cov[1, 1])


@pytest.fixture(scope="module")
def logistic_instance():
    return _oracles.logistic_instance()


def test_logistic_matches_grid_search(logistic_instance):
    x, a = logistic_instance
    fit = fit_logistic(np.column_stack([np.ones(50), x]), a)
    oracle = _oracles.grid_search_mle(x, a)
    assert fit.converged
    np.testing.assert_allclose(fit.coefficients, oracle, atol=2e-3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(40, 400))
def test_logistic_score_equations(seed, n):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
    a = (rng.random(n) < 1 / (1 + np.exp(-X @ np.array([-0.5, 0.7, -0.4])))).astype(float)
    if a.min() == a.max():
        return
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SeparationWarning)
        fit = fit_logistic(X, a)
    if fit.converged:
        p = fit.predict_proba(X)
        assert np.abs(X.T @ (a - p)).max() < 1e-8


def test_logistic_single_class():
    with pytest.raises(SeparationError):
        fit_logistic(np.ones((5, 1)), np.ones(5))


def test_logistic_separation_flagged():
    x = np.linspace(-1, 1, 20)
    a = (x > 0).astype(float)
    with pytest.warns(SeparationWarning):
        fit = fit_logistic(np.column_stack([np.ones(20), x]), a)
    assert not fit.converged
    assert np.linalg.norm(fit.coefficients) <= 30.0 + 1e-9


# --- posterior draws -------------------------------------------------------


def _model(rng, n=33, k=3, noise=1.0):
    X = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))])
    y = X @ np.array([1.0, -2.0, 0.5])[:k] + noise * rng.normal(size=n)
    return fit_ols(X, y)


def test_posterior_degenerate_when_no_residual_variance():
    x = np.arange(6.0)
    model = fit_ols(np.column_stack([np.ones(6), x]), 1 + 2 * x)
    model = FittedLinearModel(model.coefficients, 0.0, model.design_crossprod_inverse,
                              model.degrees_of_freedom, model.crossprod_inverse_root)
    coef, sigma = draw_linear_posterior(model, RngStream(1))
    assert sigma == 0.0
    assert np.array_equal(coef, model.coefficients)
    coef2, _ = draw_linear_posterior(model, RngStream(99))
    assert np.array_equal(coef, coef2)


def test_posterior_coefficient_mean():
    model = _model(np.random.default_rng(5))
    rng = RngStream(11)
    draws = np.array([draw_linear_posterior(model, rng)[0] for _ in range(10_000)])
    se = draws.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - model.coefficients) < 4 * se)


def test_posterior_sigma_variance_matches_scaled_inverse_chi2():
    model = _model(np.random.default_rng(6), n=43)
    df, s2 = model.degrees_of_freedom, model.residual_variance
    rng = RngStream(12)
    sig2 = np.array([draw_linear_posterior(model, rng)[1] ** 2 for _ in range(10_000)])
    # Var of df*s2/chi2_df (scaled inverse chi-square)
    expected = 2 * df**2 * s2**2 / ((df - 2) ** 2 * (df - 4))
    assert abs(sig2.var(ddof=1) / expected - 1) < 0.10
    assert abs(sig2.mean() / (df * s2 / (df - 2)) - 1) < 0.02


# --- random streams --------------------------------------------------------


def test_rng_same_seed_same_sequence():
    a, b = RngStream(42), RngStream(42)
    assert np.array_equal(a.normal(100), b.normal(100))
    assert np.array_equal(a.uniform(10), b.uniform(10))
    assert np.array_equal(a.chisquare(3, 10), b.chisquare(3, 10))
    assert np.array_equal(a.integers(50, 10), b.integers(50, 10))
    assert np.array_equal(a.bernoulli(np.full(10, 0.3)), b.bernoulli(np.full(10, 0.3)))


def test_substream_pure_function_of_seed_and_index():
    parent = RngStream(42)
    first = parent.substream(3).normal(20)
    parent.normal(1000)
    assert np.array_equal(parent.substream(3).normal(20), first)
    assert np.array_equal(RngStream(42, (3,)).normal(20), first)
    assert not np.array_equal(RngStream(43).substream(3).normal(20), first)


def test_substreams_uncorrelated():
    root = RngStream(7)
    x = root.substream(0).normal(100_000)
    y = root.substream(1).normal(100_000)
    z = root.substream(0, 1).normal(100_000)
    assert abs(np.corrcoef(x, y)[0, 1]) < 0.05
    assert abs(np.corrcoef(x, z)[0, 1]) < 0.05


def test_rng_pickle_preserves_state():
    s = RngStream(5).substream(2)
    s.normal(7)
    clone = pickle.loads(pickle.dumps(s))
    assert np.array_equal(clone.normal(5), s.normal(5))


def test_rng_rejects_negative():
    with pytest.raises(DomainError):
        RngStream(-1)
    with pytest.raises(DomainError):
        RngStream(1).substream(-2)
