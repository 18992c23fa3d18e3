"""Covariance preprocessing: weights, Gamma, the Cholesky factor and sampling.

Weights are checked against multiple correlations computed independently, by
least squares on the population covariance, rather than against another
reading of the same inverse.
"""

import logging

import numpy as np
import numpy.testing as npt
import pytest

from weightedbh import corr as corr_module
from weightedbh.corr import (
    build_model,
    conditional_noncentralities,
    conditional_noncentrality,
    equicorrelated_matrix,
    equicorrelated_weight,
    mean_spec,
    sample_mvn,
)
from weightedbh.errors import DecompositionError, InvalidInputError, InvalidParameterError
from weightedbh.sim.scenario import random_correlation


def r_squared_by_least_squares(corr: np.ndarray, i: int) -> float:
    rest = [j for j in range(corr.shape[0]) if j != i]
    coef, *_ = np.linalg.lstsq(corr[np.ix_(rest, rest)], corr[rest, i], rcond=None)
    return float(corr[i, rest] @ coef)


# ---- build_model -----------------------------------------------------------


@pytest.mark.parametrize("d", [1, 2, 7])
def test_identity_gives_unit_weights_and_identity_gamma(d):
    model = build_model(np.eye(d))
    npt.assert_array_equal(model.weights, np.ones(d))
    npt.assert_array_equal(model.gamma, np.eye(d))


def test_two_by_two_weights():
    model = build_model([[1.0, 0.5], [0.5, 1.0]])
    npt.assert_allclose(model.weights, [0.75, 0.75], rtol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_weights_are_one_minus_multiple_correlation(seed):
    corr = random_correlation(3 + seed, seed=seed, condition=50.0)
    model = build_model(corr)
    expected = [1.0 - r_squared_by_least_squares(corr, i) for i in range(corr.shape[0])]
    npt.assert_allclose(model.weights, expected, rtol=0, atol=1e-10)


def test_model_invariants_on_a_general_covariance():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((6, 6))
    sigma = a @ a.T + 0.5 * np.eye(6)
    model = build_model(sigma)
    npt.assert_allclose(np.diag(model.corr), 1.0, rtol=0, atol=1e-15)
    npt.assert_allclose(np.diag(model.gamma), 1.0, rtol=0, atol=1e-12)
    npt.assert_array_equal(model.gamma, model.gamma.T)
    assert np.all((model.weights > 0) & (model.weights <= 1))
    npt.assert_allclose(model.weights * model.precision_diag, 1.0, rtol=1e-15)
    rebuilt = model.chol @ model.chol.T
    assert np.linalg.norm(rebuilt - model.corr) <= 1e-10 * np.linalg.norm(model.corr)
    npt.assert_allclose(model.scale, np.sqrt(np.diag(sigma)))


def test_weights_do_not_depend_on_the_variances():
    corr = random_correlation(5, seed=11)
    scale = np.array([0.1, 1.0, 3.0, 10.0, 250.0])
    a = build_model(corr)
    b = build_model(corr * np.outer(scale, scale))
    npt.assert_allclose(b.weights, a.weights, rtol=1e-12)
    npt.assert_allclose(b.corr, a.corr, rtol=0, atol=1e-14)


def test_weight_is_one_exactly_for_an_independent_coordinate():
    corr = np.eye(4)
    corr[1:, 1:] = equicorrelated_matrix(3, 0.6)
    weights = build_model(corr).weights
    assert weights[0] == 1.0
    assert np.all(weights[1:] < 1.0)


def test_clipped_weights_are_logged_as_a_warning(monkeypatch, caplog):
    # A factor inflated by 0.1% puts every identity weight just above 1.
    monkeypatch.setattr(corr_module, "cholesky_factor", lambda matrix, label: 1.001 * np.linalg.cholesky(matrix))
    with caplog.at_level(logging.WARNING, logger="weightedbh.corr"):
        model = build_model(np.eye(3))
    npt.assert_array_equal(model.weights, np.ones(3))
    assert "clipping 3 weights" in caplog.text
    assert caplog.records[-1].levelno == logging.WARNING


def test_non_positive_definite_names_the_pivot():
    with pytest.raises(DecompositionError, match="pivot 1") as info:
        build_model([[1.0, 2.0], [2.0, 1.0]])
    assert info.value.pivot == 1


def test_singular_matrix_is_a_decomposition_failure():
    with pytest.raises(DecompositionError):
        build_model(np.ones((3, 3)))


def test_non_positive_diagonal_is_a_decomposition_failure():
    with pytest.raises(DecompositionError, match="diagonal entry 1") as info:
        build_model([[1.0, 0.0], [0.0, 0.0]])
    assert info.value.pivot == 1


def test_asymmetric_matrix_is_invalid_input():
    with pytest.raises(InvalidInputError, match="not symmetric"):
        build_model([[1.0, 0.5], [0.4, 1.0]])


def test_rounding_asymmetry_is_symmetrised():
    sigma = np.array([[1.0, 0.5], [0.5 + 1e-14, 1.0]])
    model = build_model(sigma)
    npt.assert_array_equal(model.sigma, model.sigma.T)


@pytest.mark.parametrize("bad", [np.ones((2, 3)), np.ones(3), [[1.0, np.nan], [np.nan, 1.0]]])
def test_malformed_matrices_are_invalid_input(bad):
    with pytest.raises(InvalidInputError):
        build_model(bad)


def test_decomposition_error_is_a_value_error():
    with pytest.raises(ValueError):
        build_model([[1.0, 2.0], [2.0, 1.0]])


# ---- equicorrelated weights ------------------------------------------------


def test_equicorrelated_weight_reference_values():
    assert equicorrelated_weight(7, 0.0) == 1.0
    assert equicorrelated_weight(2, 0.5) == pytest.approx(0.75, rel=1e-15)


@pytest.mark.parametrize("d", [2, 3, 5, 10, 20])
@pytest.mark.parametrize("frac", [-0.9, -0.5, -0.1, 0.0, 0.3, 0.7, 0.9, 0.99])
def test_equicorrelated_weight_matches_build_model(d, frac):
    # frac scales the admissible negative range so every (d, rho) is feasible.
    rho = frac if frac >= 0 else frac / (d - 1)
    model = build_model(equicorrelated_matrix(d, rho))
    npt.assert_allclose(model.weights, equicorrelated_weight(d, rho), rtol=0, atol=1e-12)


def test_equicorrelated_weight_negative_reference():
    model = build_model(equicorrelated_matrix(5, -0.2))
    w = equicorrelated_weight(5, -0.2)
    assert w > 0
    npt.assert_allclose(model.weights, w, rtol=0, atol=1e-12)


@pytest.mark.parametrize(("d", "rho"), [(4, -0.5), (2, -1.0), (3, 1.0), (5, 1.5), (1, 0.2), (2.5, 0.1)])
def test_equicorrelated_weight_rejects_infeasible_parameters(d, rho):
    with pytest.raises(InvalidParameterError):
        equicorrelated_weight(d, rho)


def test_boundary_negative_rho_for_two_dimensions_is_feasible():
    assert equicorrelated_weight(2, -0.5) == pytest.approx(0.75)


# ---- conditional noncentrality ---------------------------------------------


def test_centred_rest_gives_zero_noncentrality():
    model = build_model(random_correlation(4, seed=2))
    rest = np.array([0.3, -1.0, 2.0])
    assert conditional_noncentrality(model, 2, rest, rest) == 0.0


def test_diagonal_covariance_gives_zero_noncentrality():
    model = build_model(np.diag([1.0, 4.0, 9.0]))
    assert conditional_noncentrality(model, 0, [1.0, 2.0], [0.0, -3.0]) == 0.0


def test_two_by_two_noncentrality_by_hand():
    rho = 0.5
    model = build_model(equicorrelated_matrix(2, rho))
    # Gamma for d = 2 is [[1, -rho], [-rho, 1]].
    npt.assert_allclose(model.gamma, [[1.0, -rho], [-rho, 1.0]], rtol=1e-14)
    y1, d1 = 1.7, 0.4
    expected = (model.gamma[0, 1] * (y1 - d1)) ** 2
    assert conditional_noncentrality(model, 1, [y1], [d1]) == pytest.approx(expected, rel=1e-14)


def test_batched_noncentralities_agree_with_the_single_form():
    model = build_model(random_correlation(5, seed=8))
    rng = np.random.default_rng(0)
    y = rng.standard_normal((20, 5))
    delta = rng.standard_normal(5)
    lam = conditional_noncentralities(model, y, delta)
    for i in range(5):
        rest = [j for j in range(5) if j != i]
        single = conditional_noncentrality(model, i, y[:, rest], delta[rest])
        npt.assert_allclose(lam[:, i], single, rtol=1e-12, atol=1e-12)


def test_noncentrality_dimension_mismatch():
    model = build_model(np.eye(3))
    with pytest.raises(InvalidInputError, match="length 2"):
        conditional_noncentrality(model, 0, [1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
    with pytest.raises(InvalidInputError, match="out of range"):
        conditional_noncentrality(model, 3, [1.0, 2.0], [0.0, 0.0])


def test_mean_spec_delta():
    model = build_model([[4.0, 1.0], [1.0, 1.0]])
    spec = mean_spec(model, [2.0, 0.0])
    npt.assert_allclose(spec.delta, [2.0 / (2.0 * np.sqrt(model.weights[0])), 0.0])


# ---- sampling --------------------------------------------------------------


def test_same_seed_same_draw():
    model = build_model(random_correlation(4, seed=1))
    mean = mean_spec(model, np.arange(4.0))
    a = sample_mvn(model, mean, np.random.default_rng(99))
    b = sample_mvn(model, mean, np.random.default_rng(99))
    npt.assert_array_equal(a, b)
    assert a.shape == (4,)


def test_zero_mean_identity_sample_mean():
    model = build_model(np.eye(3))
    n = 1_000_000
    draws = sample_mvn(model, mean_spec(model, np.zeros(3)), np.random.default_rng(5), size=n)
    assert draws.shape == (n, 3)
    assert np.all(np.abs(draws.mean(axis=0)) <= 4 / np.sqrt(n))


def test_sample_correlation_and_scale():
    sigma = np.array([[4.0, 0.9 * 2 * 3], [0.9 * 2 * 3, 9.0]])
    model = build_model(sigma)
    draws = sample_mvn(model, mean_spec(model, [1.0, -2.0]), np.random.default_rng(6), size=1_000_000)
    assert np.corrcoef(draws.T)[0, 1] == pytest.approx(0.9, abs=0.005)
    npt.assert_allclose(draws.std(axis=0), [2.0, 3.0], rtol=0.005)
    npt.assert_allclose(draws.mean(axis=0), [1.0, -2.0], atol=0.02)


def test_weighted_statistic_regression_recovers_gamma():
    """Regressing Y_i on the rest gives slope -gamma_{-i,i} and unit residual variance."""
    corr = random_correlation(3, seed=4, condition=20.0)
    model = build_model(corr)
    n = 1_000_000
    x = sample_mvn(model, mean_spec(model, np.zeros(3)), np.random.default_rng(12), size=n)
    y = x / (model.scale * np.sqrt(model.weights))
    for i in range(3):
        rest = [j for j in range(3) if j != i]
        coef, *_ = np.linalg.lstsq(y[:, rest], y[:, i], rcond=None)
        resid = y[:, i] - y[:, rest] @ coef
        var = resid @ resid / (n - 2)
        se = np.sqrt(var * np.diag(np.linalg.inv(y[:, rest].T @ y[:, rest])))
        assert np.all(np.abs(coef + model.gamma[rest, i]) <= 4 * se)
        assert abs(var - 1.0) <= 4 * np.sqrt(2.0 / n)
