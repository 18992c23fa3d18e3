"""Covariance preprocessing for the weighted tests.

A covariance matrix is reduced once to a :class:`CorrelationModel` holding
everything the tests and the simulator read from it: the correlation matrix,
its Cholesky factor, the multiple-correlation weights ``w_i = 1 - R_i^2`` and
the unit-diagonal matrix ``Gamma = diag(sqrt(w)) C^-1 diag(sqrt(w))``.

``w_i`` is the reciprocal of the i-th diagonal entry of the inverse correlation
matrix. That diagonal is read off the inverse Cholesky factor, never from a
general-purpose inverse.
"""

import logging
import typing

import numpy as np
import numpy.typing as npt
from scipy import linalg
from scipy.linalg import lapack

from .errors import DecompositionError, InvalidInputError, InvalidParameterError

__all__ = [
    "PIVOT_RTOL",
    "SYMMETRY_RTOL",
    "CorrelationModel",
    "MeanSpec",
    "build_model",
    "cholesky_factor",
    "conditional_noncentralities",
    "conditional_noncentrality",
    "equicorrelated_matrix",
    "equicorrelated_weight",
    "mean_spec",
    "sample_mvn",
]

logger = logging.getLogger(__name__)

SYMMETRY_RTOL = 1e-10
PIVOT_RTOL = 1e-12


class CorrelationModel(typing.NamedTuple):
    """A positive-definite covariance and what the weighted tests derive from it."""

    dimension: int
    sigma: np.ndarray
    """The symmetrised input covariance."""

    scale: np.ndarray
    """``sqrt(sigma_ii)``, the per-coordinate standard deviations."""

    corr: np.ndarray
    """Standardised correlation matrix, unit diagonal."""

    precision_diag: np.ndarray
    """Diagonal of ``corr^-1``; each entry is ``1 / (1 - R_i^2) >= 1``."""

    weights: np.ndarray
    """``w_i = 1 / precision_diag[i]``, in ``(0, 1]``."""

    gamma: np.ndarray
    """``diag(sqrt(w)) corr^-1 diag(sqrt(w))``, unit diagonal."""

    chol: np.ndarray
    """Lower-triangular ``L`` with ``L @ L.T == corr``."""


class MeanSpec(typing.NamedTuple):
    """A mean vector and its standardised, weight-inflated form."""

    mu: np.ndarray
    delta: np.ndarray
    """``mu_i / sqrt(sigma_ii * w_i)``: the mean of the weighted statistic ``Y_i``."""


def _as_square(matrix: npt.ArrayLike, label: str) -> np.ndarray:
    arr = np.array(matrix, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
        raise InvalidInputError(f"{label} must be a non-empty square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{label} contains non-finite entries")
    return arr


def cholesky_factor(matrix: np.ndarray, *, label: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor, or a :class:`DecompositionError` naming the failing pivot.

    A pivot counts as failed when LAPACK rejects it or when its square falls
    below ``PIVOT_RTOL`` times the largest diagonal entry of ``matrix``.
    """
    factor, info = lapack.dpotrf(matrix, lower=1, clean=1)
    if info > 0:
        raise DecompositionError(
            f"{label} is not positive definite: leading minor of order {info} fails (pivot {info - 1})",
            pivot=int(info - 1),
        )
    if info < 0:
        raise InvalidInputError(f"{label}: LAPACK dpotrf rejected argument {-info}")
    threshold = PIVOT_RTOL * float(np.max(np.diag(matrix)))
    small = np.flatnonzero(np.diag(factor) ** 2 < threshold)
    if small.size:
        pivot = int(small[0])
        raise DecompositionError(
            f"{label} is numerically singular: pivot {pivot} is {np.diag(factor)[pivot] ** 2:.3g}, "
            f"below {threshold:.3g}",
            pivot=pivot,
        )
    return np.tril(factor)


def build_model(sigma: npt.ArrayLike) -> CorrelationModel:
    """Standardise ``sigma`` and derive weights, ``Gamma`` and the Cholesky factor.

    :raises InvalidInputError: if ``sigma`` is not square, not finite, or not
        symmetric to ``SYMMETRY_RTOL`` relative to its largest entry.
    :raises DecompositionError: if ``sigma`` is not positive definite.
    """
    arr = _as_square(sigma, "sigma")
    largest = float(np.max(np.abs(arr)))
    asymmetry = float(np.max(np.abs(arr - arr.T)))
    if asymmetry > SYMMETRY_RTOL * largest:
        raise InvalidInputError(f"sigma is not symmetric: max |s_ij - s_ji| = {asymmetry:.3g}")
    arr = 0.5 * (arr + arr.T)

    diag = np.diag(arr)
    if np.any(diag <= 0):
        pivot = int(np.flatnonzero(diag <= 0)[0])
        raise DecompositionError(f"sigma is not positive definite: diagonal entry {pivot} is {diag[pivot]!r}", pivot)

    d = arr.shape[0]
    scale = np.sqrt(diag)
    corr = arr / np.outer(scale, scale)
    np.fill_diagonal(corr, 1.0)

    chol = cholesky_factor(corr, label="sigma")
    chol_inv = linalg.solve_triangular(chol, np.eye(d), lower=True)
    precision = chol_inv.T @ chol_inv
    precision_diag = np.einsum("ki,ki->i", chol_inv, chol_inv)

    weights = 1.0 / precision_diag
    if np.any(weights > 1.0):
        logger.warning("clipping %d weights above 1 by at most %.3g", int(np.sum(weights > 1.0)), weights.max() - 1)
        weights = np.minimum(weights, 1.0)

    root_w = np.sqrt(weights)
    gamma = root_w[:, None] * precision * root_w[None, :]
    gamma = 0.5 * (gamma + gamma.T)
    np.fill_diagonal(gamma, 1.0)

    return CorrelationModel(
        dimension=d,
        sigma=arr,
        scale=scale,
        corr=corr,
        precision_diag=precision_diag,
        weights=weights,
        gamma=gamma,
        chol=chol,
    )


def equicorrelated_matrix(d: int, rho: float) -> np.ndarray:
    """``(1 - rho) I + rho 11'`` of size ``d``."""
    _check_equicorrelation(d, rho)
    return (1.0 - rho) * np.eye(d) + rho * np.ones((d, d))


def _check_equicorrelation(d: int, rho: float) -> None:
    if int(d) != d or d < 2:
        raise InvalidParameterError(f"equicorrelated dimension must be an integer >= 2, got {d!r}")
    lower = -1.0 / (d - 1)
    if not (lower < rho < 1.0):
        raise InvalidParameterError(f"rho must lie in ({lower:.6g}, 1) for d = {d}, got {rho!r}")


def equicorrelated_weight(d: int, rho: float) -> float:
    """Common weight ``1 - R^2`` of every coordinate of an equicorrelated vector."""
    _check_equicorrelation(d, rho)
    return (1.0 - rho) * (1.0 + (d - 1) * rho) / (1.0 + (d - 2) * rho)


def mean_spec(model: CorrelationModel, mu: npt.ArrayLike) -> MeanSpec:
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (model.dimension,):
        raise InvalidInputError(f"mean must have length {model.dimension}, got shape {mu.shape}")
    return MeanSpec(mu=mu, delta=mu / (model.scale * np.sqrt(model.weights)))


def conditional_noncentrality(
    model: CorrelationModel,
    i: int,
    y_rest: npt.ArrayLike,
    delta_rest: npt.ArrayLike,
) -> typing.Union[float, np.ndarray]:
    """Noncentrality of ``Y_i^2`` given the other weighted statistics.

    ``(gamma_{-i,i}' (y_rest - delta_rest))^2``. ``y_rest`` may carry leading
    batch dimensions; the last axis must have length ``d - 1``.
    """
    d = model.dimension
    if not 0 <= i < d:
        raise InvalidInputError(f"index {i} out of range for dimension {d}")
    y_rest = np.asarray(y_rest, dtype=float)
    delta_rest = np.asarray(delta_rest, dtype=float)
    if y_rest.shape[-1:] != (d - 1,) or delta_rest.shape[-1:] != (d - 1,):
        raise InvalidInputError(
            f"y_rest and delta_rest must end in length {d - 1}, got {y_rest.shape} and {delta_rest.shape}"
        )
    column = np.delete(model.gamma[:, i], i)
    lam = ((y_rest - delta_rest) @ column) ** 2
    return float(lam) if np.ndim(lam) == 0 else lam


def conditional_noncentralities(model: CorrelationModel, y: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """:func:`conditional_noncentrality` for every coordinate of every row of ``y`` at once."""
    centred = np.asarray(y, dtype=float) - delta
    # Gamma has unit diagonal, so subtracting the centred value removes the i-th term.
    return (centred @ model.gamma - centred) ** 2


def sample_mvn(
    model: CorrelationModel,
    mean: MeanSpec,
    rng: np.random.Generator,
    size: typing.Optional[int] = None,
) -> np.ndarray:
    """Draw ``X ~ N(mu, sigma)`` through the Cholesky factor of the correlation.

    Returns shape ``(d,)``, or ``(size, d)`` when ``size`` is given. ``rng`` must
    not be shared with another caller.
    """
    d = model.dimension
    z = rng.standard_normal(d if size is None else (size, d))
    return mean.mu + (z @ model.chol.T) * model.scale
