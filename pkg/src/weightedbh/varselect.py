"""FDR-controlled variable selection in the Gaussian linear model ``Y = X beta + eps``.

Each coefficient is tested with its squared t statistic, and the weighted t test
from :mod:`.procedure` is run with ``m = n - d`` and weights
``w_i = 1 / (a_ii * a^ii)``, where ``a_ii`` and ``a^ii`` are the diagonals of the
Gram matrix ``A = X'X`` and of its inverse. Those weights are ``1 - R_i^2`` for
the correlation of ``beta_hat``, whose covariance is ``tau^2 A^-1``.

The Gram matrix is factored once; ``beta_hat``, ``A^-1`` and its diagonal all
come from that factor. Whatever depends on the design alone lives in a
:class:`DesignPlan`, so a simulation that redraws only the response pays for it
once.

No intercept is added: include a column of ones in ``X`` to fit one.
"""

import logging
import typing

import numpy as np
import numpy.typing as npt
from scipy import linalg

from .corr import build_model, cholesky_factor
from .errors import DegenerateFitError, InvalidInputError
from .procedure import (
    CalibratedMethod,
    MethodKind,
    StepUpOutcome,
    WeightedTestResult,
    calibrate,
    check_alpha,
    stepup,
)

__all__ = [
    "DEGENERATE_RSS",
    "DesignPlan",
    "OLSFit",
    "RegressionProblem",
    "evaluate_selection",
    "fit_response",
    "ols_fit",
    "prepare_design",
    "regression_problem",
    "select_variables",
    "selection_weights",
    "t_squared",
    "weighted_t_test",
    "weighted_t_inputs",
]

logger = logging.getLogger(__name__)

DEGENERATE_RSS = 1e-14


class RegressionProblem(typing.NamedTuple):
    design: np.ndarray
    """``n x d`` matrix of rank ``d < n``."""

    response: np.ndarray
    """Length-``n`` response."""


class OLSFit(typing.NamedTuple):
    beta_hat: np.ndarray
    tau2_hat: float
    """Residual sum of squares over ``n - d``."""

    gram: np.ndarray
    gram_inv: np.ndarray
    dof: int
    """``n - d``."""

    degenerate: bool
    """True when ``tau2_hat`` is below ``DEGENERATE_RSS * mean(Y^2)``."""


class DesignPlan(typing.NamedTuple):
    """What the selection test needs from the design matrix alone."""

    design: np.ndarray
    factor: np.ndarray
    """Lower Cholesky factor of ``X'X``."""

    gram: np.ndarray
    gram_inv: np.ndarray
    weights: np.ndarray
    method: CalibratedMethod


def _check_design(design: npt.ArrayLike) -> np.ndarray:
    x = np.array(design, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] == 0:
        raise InvalidInputError(f"design must be an n x d matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("design must be finite")
    n, d = x.shape
    if n <= d:
        raise InvalidInputError(f"need more observations than variables to estimate tau^2, got n={n}, d={d}")
    return x


def regression_problem(design: npt.ArrayLike, response: npt.ArrayLike) -> RegressionProblem:
    """Validated :class:`RegressionProblem`.

    :raises InvalidInputError: for mismatched shapes, non-finite values, or ``n <= d``.
    """
    x = _check_design(design)
    y = np.array(response, dtype=float)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    if y.shape != (x.shape[0],):
        raise InvalidInputError(f"response must have length {x.shape[0]}, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("response must be finite")
    return RegressionProblem(design=x, response=y)


def _factor_gram(x: np.ndarray) -> typing.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    gram = x.T @ x
    factor = cholesky_factor(gram, label="X'X (design is rank deficient)")
    gram_inv = linalg.cho_solve((factor, True), np.eye(x.shape[1]))
    return factor, gram, 0.5 * (gram_inv + gram_inv.T)


def _fit(x: np.ndarray, y: np.ndarray, factor: np.ndarray, gram: np.ndarray, gram_inv: np.ndarray) -> OLSFit:
    beta_hat = linalg.cho_solve((factor, True), x.T @ y)
    resid = y - x @ beta_hat
    dof = x.shape[0] - x.shape[1]
    tau2_hat = float(resid @ resid) / dof
    degenerate = tau2_hat <= DEGENERATE_RSS * float(np.mean(y**2))
    if degenerate:
        logger.warning("residual variance %.3g is numerically zero: the response is fit exactly", tau2_hat)
    return OLSFit(beta_hat, tau2_hat, gram, gram_inv, dof, bool(degenerate))


def ols_fit(problem: RegressionProblem) -> OLSFit:
    """Least-squares fit through the Cholesky factor of ``X'X``.

    A response fit exactly comes back with ``degenerate`` set rather than
    raising; :func:`t_squared` is where that becomes an error.

    :raises InvalidInputError: if ``n <= d``.
    :raises DecompositionError: if ``X`` is rank deficient.
    """
    x = _check_design(problem.design)
    return _fit(x, np.asarray(problem.response, dtype=float), *_factor_gram(x))


def t_squared(fit: OLSFit) -> np.ndarray:
    """``T_i^2 = beta_hat_i^2 / (a^ii * tau2_hat)``.

    :raises DegenerateFitError: when the fit has no residual variance.
    """
    if fit.degenerate or not fit.tau2_hat > 0:
        raise DegenerateFitError(f"residual variance {fit.tau2_hat:.3g} is zero: t statistics are undefined")
    return fit.beta_hat**2 / (np.diag(fit.gram_inv) * fit.tau2_hat)


def _gram_weights(gram: np.ndarray, gram_inv: np.ndarray) -> np.ndarray:
    return np.minimum(1.0 / (np.diag(gram) * np.diag(gram_inv)), 1.0)


def selection_weights(fit: typing.Union[OLSFit, DesignPlan]) -> np.ndarray:
    """``w_i = 1 / (a_ii * a^ii)``, clipped to at most 1."""
    return _gram_weights(fit.gram, fit.gram_inv)


def weighted_t_inputs(fit: OLSFit) -> typing.Tuple[np.ndarray, float, int, np.ndarray]:
    """``(x, v, m, sigma)`` under which :func:`~.procedure.weighted_bh_t` runs the same test.

    ``x_i = beta_hat_i / sqrt(a^ii)``, ``v = (n - d) tau2_hat``, ``m = n - d``
    and ``sigma`` the correlation matrix of ``A^-1``.
    """
    sd = np.sqrt(np.diag(fit.gram_inv))
    return fit.beta_hat / sd, fit.dof * fit.tau2_hat, fit.dof, build_model(fit.gram_inv).corr


# ---- selection -------------------------------------------------------------


def prepare_design(design: npt.ArrayLike, alpha: float) -> DesignPlan:
    """Factor ``X'X``, derive the weights and calibrate ``alpha1`` for ``m = n - d``."""
    alpha = check_alpha(alpha)
    x = _check_design(design)
    factor, gram, gram_inv = _factor_gram(x)
    weights = _gram_weights(gram, gram_inv)
    method = calibrate(weights, alpha, MethodKind.t(x.shape[0] - x.shape[1]))
    return DesignPlan(x, factor, gram, gram_inv, weights, method)


def fit_response(plan: DesignPlan, response: npt.ArrayLike) -> OLSFit:
    y = np.asarray(response, dtype=float)
    if y.shape != (plan.design.shape[0],):
        raise InvalidInputError(f"response must have length {plan.design.shape[0]}, got shape {y.shape}")
    return _fit(plan.design, y, plan.factor, plan.gram, plan.gram_inv)


def weighted_t_test(plan: DesignPlan, fit: OLSFit) -> WeightedTestResult:
    """Run the weighted t test of a fit made with ``plan``'s design."""
    kind = plan.method.kind
    t2 = t_squared(fit)
    weighted = t2 / plan.weights
    transformed = np.asarray(kind.sf(weighted), dtype=float)
    return WeightedTestResult(
        method=plan.method,
        pvalues=np.asarray(kind.sf(t2), dtype=float),
        transformed=transformed,
        weighted_stats=weighted,
        outcome=stepup(transformed, plan.method.critical_constants),
    )


def evaluate_selection(problem: RegressionProblem, alpha: float) -> typing.Tuple[OLSFit, WeightedTestResult]:
    """Fit, weight and test; returns the fit alongside every intermediate of the test."""
    plan = prepare_design(problem.design, alpha)
    fit = fit_response(plan, problem.response)
    return fit, weighted_t_test(plan, fit)


def select_variables(problem: RegressionProblem, alpha: float) -> StepUpOutcome:
    """Indices of the variables selected by the weighted BH test at FDR level ``alpha``."""
    return evaluate_selection(problem, alpha)[1].outcome
