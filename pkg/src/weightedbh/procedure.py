"""The weighted Benjamini-Hochberg step-up tests for two-sided z and t statistics.

The weighted z test divides each squared z statistic by its weight ``w_i``
before converting it to a p-value, and runs the BH step-up on the result with
critical constants ``i * alpha1``. ``alpha1`` is not ``alpha / d``: it is the
root of::

    sum_i sf(w_i * isf(alpha1)) = alpha

with ``sf``/``isf`` the chi-squared(1) tail (z test) or the F(1, m) tail (t
test). With unit weights the root is ``alpha / d`` and everything reduces to
textbook BH.

The engine keeps one representation, the weighted squared statistic
``Y_i^2 = Z_i^2 / w_i`` (``m Y_i^2 / V`` for the t test), and derives both the
transformed p-values (``sf`` of it) and the statistic-space step-up from it.
"""

import logging
import math
import typing

import numpy as np
import numpy.typing as npt

from . import dist
from ._roots import MAX_ITER, newton_bisect
from .corr import CorrelationModel, build_model
from .errors import InvalidInputError, InvalidParameterError, NumericalFailureError

__all__ = [
    "CALIBRATION_TOL",
    "CalibratedMethod",
    "MethodKind",
    "StepUpOutcome",
    "WeightedTestResult",
    "calibrate",
    "calibrate_alpha1",
    "check_alpha",
    "evaluate_t",
    "evaluate_z",
    "fdr_upper_bound",
    "leave_one_out_counts",
    "plain_bh",
    "simes_global",
    "statistic_space_stepup",
    "stepup",
    "transform_pvalue",
    "transform_pvalues",
    "weighted_bh_t",
    "weighted_bh_z",
]

logger = logging.getLogger(__name__)

CALIBRATION_TOL = 1e-10

# p-values of exactly 0 or 1 are pushed this far inside (0, 1) before an inverse
# survival function sees them.
_P_FLOOR = dist.MIN_TAIL
_P_CEIL = 1.0 - 1e-16


class MethodKind(typing.NamedTuple):
    """Which null law the squared statistics follow: chi-squared(1), or F(1, m)."""

    kind: str
    m: typing.Optional[float] = None

    @classmethod
    def z(cls) -> "MethodKind":
        return cls("z")

    @classmethod
    def t(cls, m: float) -> "MethodKind":
        return cls.parse("t", m)

    @classmethod
    def parse(cls, kind: str, m: typing.Optional[float] = None) -> "MethodKind":
        """Validated constructor.

        :raises InvalidParameterError: for an unknown kind, a t method without a
            positive ``m``, or a z method with one.
        """
        kind = str(kind).lower()
        if kind == "z":
            if m is not None:
                raise InvalidParameterError("the z method takes no degrees of freedom")
            return cls("z")
        if kind == "t":
            if m is None or not (math.isfinite(float(m)) and float(m) > 0):
                raise InvalidParameterError(f"the t method needs positive degrees of freedom m, got {m!r}")
            return cls("t", float(m))
        raise InvalidParameterError(f"method kind must be 'z' or 't', got {kind!r}")

    @property
    def law(self) -> typing.Union[dist.ChiSquareLaw, dist.FLaw]:
        return dist.ChiSquareLaw(1.0) if self.kind == "z" else dist.FLaw(1.0, self.m)

    @property
    def label(self) -> str:
        return "z" if self.kind == "z" else f"t(m={self.m:g})"

    def sf(self, x: npt.ArrayLike) -> typing.Union[float, np.ndarray]:
        return self.law.sf(x)

    def isf(self, u: float) -> float:
        return self.law.isf(u)

    def pdf(self, x: npt.ArrayLike) -> typing.Union[float, np.ndarray]:
        return self.law.pdf(x)


class CalibratedMethod(typing.NamedTuple):
    """A weighted BH method with its base constant solved."""

    kind: MethodKind
    weights: np.ndarray
    alpha: float
    alpha1: float
    critical_constants: np.ndarray
    """``i * alpha1`` for ``i = 1..d``."""

    residual: float
    """``sum_i sf(w_i * isf(alpha1)) - alpha`` at the solution."""


class StepUpOutcome(typing.NamedTuple):
    """Result of one step-up pass."""

    rejections: int
    """R, the number of rejected hypotheses."""

    rejected: typing.Tuple[int, ...]
    """Indices of the rejected hypotheses, ascending."""

    threshold: typing.Optional[float]
    """The R-th smallest (transformed) p-value; None when nothing is rejected."""


class WeightedTestResult(typing.NamedTuple):
    """Everything a weighted test computed on the way to its decisions."""

    method: CalibratedMethod
    pvalues: np.ndarray
    """Unweighted two-sided p-values."""

    transformed: np.ndarray
    """Weighted p-values, ``sf(weighted_stats)``."""

    weighted_stats: np.ndarray
    outcome: StepUpOutcome


# ---- validation ------------------------------------------------------------


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0):
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha!r}")
    return alpha


def _check_weights(weights: npt.ArrayLike) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InvalidInputError(f"weights must be a non-empty vector, got shape {w.shape}")
    if np.any(np.isnan(w)) or np.any(w <= 0) or np.any(w > 1):
        raise InvalidParameterError(f"weights must lie in (0, 1], got min {w.min()!r}, max {w.max()!r}")
    return w


def _check_pvalues(pvalues: npt.ArrayLike) -> np.ndarray:
    p = np.asarray(pvalues, dtype=float)
    if p.ndim != 1:
        raise InvalidInputError(f"p-values must be a vector, got shape {p.shape}")
    if np.any(np.isnan(p)) or np.any(p < 0) or np.any(p > 1):
        raise InvalidInputError("p-values must lie in [0, 1]")
    return p


# ---- p-value transform -----------------------------------------------------


def transform_pvalue(p: float, w: float, kind: MethodKind) -> float:
    """``sf(isf(p) / w)``: the p-value of the weight-inflated statistic.

    For p-values computed elsewhere. :func:`evaluate_z` and :func:`evaluate_t`
    start from the statistics and take ``sf`` of the weighted statistic
    directly, which is the same value without the ``isf`` round trip.
    Unit weight returns ``p`` untouched, as do ``p == 0`` and ``p == 1``.
    """
    p = float(p)
    w = float(w)
    if not (0.0 <= p <= 1.0):
        raise InvalidParameterError(f"p-value must lie in [0, 1], got {p!r}")
    if not (0.0 < w <= 1.0):
        raise InvalidParameterError(f"weight must lie in (0, 1], got {w!r}")
    if w == 1.0 or p in (0.0, 1.0):
        return p
    clamped = min(max(p, _P_FLOOR), _P_CEIL)
    return float(kind.sf(kind.isf(clamped) / w))


def transform_pvalues(pvalues: npt.ArrayLike, weights: npt.ArrayLike, kind: MethodKind) -> np.ndarray:
    p = _check_pvalues(pvalues)
    w = _check_weights(weights)
    if p.shape != w.shape:
        raise InvalidInputError(f"{p.size} p-values but {w.size} weights")
    return np.array([transform_pvalue(pi, wi, kind) for pi, wi in zip(p, w)])


# ---- calibration -----------------------------------------------------------


def _calibration_sum(weights: np.ndarray, kind: MethodKind, a: float) -> float:
    return math.fsum(np.asarray(kind.sf(weights * kind.isf(a)), dtype=float).ravel())


def calibrate_alpha1(weights: npt.ArrayLike, alpha: float, kind: MethodKind) -> float:
    """Solve ``sum_i sf(w_i * isf(alpha1)) = alpha`` for ``alpha1`` in ``(0, alpha / d]``.

    The left side increases strictly from 0 to at least ``alpha`` over that
    interval, so the root is unique and bracketed. When the left side is
    already within rounding of ``alpha`` at ``alpha / d`` (unit weights), that
    endpoint is returned as is.

    :raises NumericalFailureError: if the root lies below :data:`~.dist.MIN_TAIL`,
        or the solver does not reach a residual of :data:`CALIBRATION_TOL`
        within its iteration budget.
    """
    w = _check_weights(weights)
    alpha = check_alpha(alpha)
    hi = alpha / w.size

    def residual(a: float) -> float:
        return _calibration_sum(w, kind, a) - alpha

    # f(alpha / d) >= alpha, with equality exactly when every weight is 1.
    if residual(hi) <= 0.01 * CALIBRATION_TOL:
        return hi
    if residual(dist.MIN_TAIL) > 0.0:
        raise NumericalFailureError(
            f"alpha1 lies below the smallest supported tail {dist.MIN_TAIL!r} (min weight {w.min()!r})"
        )

    # Searched over log(alpha1): the root can sit hundreds of decades below alpha / d.
    def from_log(u: float) -> float:
        return min(max(math.exp(u), dist.MIN_TAIL), hi)

    def slope(u: float) -> float:
        a = from_log(u)
        x = kind.isf(a)
        density = float(kind.pdf(x))
        if density == 0.0:
            return math.nan
        return a * math.fsum(np.asarray(w * kind.pdf(w * x), dtype=float).ravel()) / density

    log_root = newton_bisect(
        lambda u: residual(from_log(u)),
        slope,
        math.log(dist.MIN_TAIL),
        math.log(hi),
        x0=math.log(hi),
        ftol=0.01 * CALIBRATION_TOL,
        maxiter=MAX_ITER,
    )
    root = from_log(log_root)
    final = residual(root)
    if not abs(final) <= CALIBRATION_TOL:
        raise NumericalFailureError(f"calibration residual {final:.3g} exceeds {CALIBRATION_TOL:g} at alpha1={root!r}")
    logger.debug("calibrated alpha1=%r for d=%d, alpha=%r (%s), residual %.3g", root, w.size, alpha, kind.label, final)
    return root


def calibrate(weights: npt.ArrayLike, alpha: float, kind: MethodKind) -> CalibratedMethod:
    """:func:`calibrate_alpha1`, packaged with the constants and residual."""
    w = _check_weights(weights)
    alpha1 = calibrate_alpha1(w, alpha, kind)
    return CalibratedMethod(
        kind=kind,
        weights=w,
        alpha=float(alpha),
        alpha1=alpha1,
        critical_constants=alpha1 * np.arange(1, w.size + 1, dtype=float),
        residual=_calibration_sum(w, kind, alpha1) - float(alpha),
    )


def fdr_upper_bound(
    weights: npt.ArrayLike,
    alpha1: float,
    kind: MethodKind,
    nulls: typing.Optional[typing.Iterable[int]] = None,
) -> float:
    """``sum_{i in nulls} sf(w_i * isf(alpha1))``, the FDR bound over the true nulls.

    Equals ``alpha`` when ``nulls`` is every index (the default) and ``alpha1``
    is calibrated; smaller otherwise.
    """
    w = _check_weights(weights)
    if nulls is not None:
        w = w[np.asarray(sorted(set(nulls)), dtype=int)] if nulls else w[:0]
    if w.size == 0:
        return 0.0
    return _calibration_sum(w, kind, float(alpha1))


# ---- step-up ---------------------------------------------------------------


def stepup(pvalues: npt.ArrayLike, constants: npt.ArrayLike) -> StepUpOutcome:
    """Step-up test: ``R = max{i : p_(i) <= c_i}``, rejecting every ``p <= p_(R)``.

    Ties are ordered by index; since rejection compares against ``p_(R)``,
    hypotheses tied at the threshold are rejected together.
    """
    p = _check_pvalues(pvalues)
    c = np.asarray(constants, dtype=float)
    if c.shape != p.shape:
        raise InvalidInputError(f"{p.size} p-values but {c.size} critical constants")
    if c.size and (np.any(np.diff(c) < 0) or c[0] <= 0 or c[-1] >= 1):
        raise InvalidInputError("critical constants must be nondecreasing within (0, 1)")

    ordered = np.sort(p, kind="stable")
    hits = np.flatnonzero(ordered <= c)
    if hits.size == 0:
        return StepUpOutcome(0, (), None)
    count = int(hits[-1]) + 1
    threshold = float(ordered[count - 1])
    rejected = tuple(int(i) for i in np.flatnonzero(p <= threshold))
    return StepUpOutcome(count, rejected, threshold)


def plain_bh(pvalues: npt.ArrayLike, alpha: float) -> StepUpOutcome:
    """Textbook BH at level ``alpha``: constants ``(alpha / d) * i``, built as the calibrated constants are."""
    p = _check_pvalues(pvalues)
    alpha = check_alpha(alpha)
    return stepup(p, (alpha / p.size) * np.arange(1, p.size + 1, dtype=float))


def statistic_space_stepup(stats: npt.ArrayLike, alpha1: float, kind: MethodKind) -> StepUpOutcome:
    """The same test phrased on weighted squared statistics.

    Orders ``T_(1) <= ... <= T_(d)``, finds ``R' = min{i : T_(i) >= isf((d - i + 1) alpha1)}``
    and rejects every ``T >= T_(R')``; nothing when no such ``i`` exists. Rejects
    exactly what :func:`stepup` rejects on ``sf(stats)`` with constants ``i * alpha1``.
    """
    t = np.asarray(stats, dtype=float)
    if t.ndim != 1 or np.any(np.isnan(t)) or np.any(t < 0):
        raise InvalidInputError("statistics must be a vector of non-negative values")
    d = t.size
    alpha1 = float(alpha1)
    if d == 0:
        return StepUpOutcome(0, (), None)
    if not (0.0 < alpha1 and d * alpha1 < 1.0):
        raise InvalidParameterError(f"alpha1 must satisfy 0 < d * alpha1 < 1, got {alpha1!r} for d = {d}")

    ordered = np.sort(t, kind="stable")
    cutoffs = np.array([kind.isf((d - i) * alpha1) for i in range(d)])
    hits = np.flatnonzero(ordered >= cutoffs)
    if hits.size == 0:
        return StepUpOutcome(0, (), None)
    cut = float(ordered[hits[0]])
    rejected = tuple(int(i) for i in np.flatnonzero(t >= cut))
    return StepUpOutcome(len(rejected), rejected, float(kind.sf(cut)))


def simes_global(pvalues_transformed: npt.ArrayLike, alpha1: float) -> bool:
    """Simes test of the intersection null: reject iff some ``p_(i) <= i * alpha1``."""
    p = np.sort(_check_pvalues(pvalues_transformed))
    return bool(np.any(p <= float(alpha1) * np.arange(1, p.size + 1)))


def leave_one_out_counts(pvalues: npt.ArrayLike, constants: npt.ArrayLike) -> np.ndarray:
    """``R_{-i}`` for every ``i``: the step-up count on the other p-values with shifted constants.

    ``R_{-i} = max{j : q_(j) <= c_{j+1}}`` over the ordered p-values with the
    i-th removed, 0 when no ``j`` qualifies.
    """
    p = _check_pvalues(pvalues)
    c = np.asarray(constants, dtype=float)
    if c.shape != p.shape:
        raise InvalidInputError(f"{p.size} p-values but {c.size} critical constants")
    d = p.size
    if d <= 1:
        return np.zeros(d, dtype=int)

    order = np.argsort(p, kind="stable")
    ordered = p[order]
    k = np.arange(d)[:, None]
    j = np.arange(d - 1)[None, :]
    # Row k is the ordered vector with its k-th element removed.
    remaining = np.where(j < k, ordered[:-1][None, :], ordered[1:][None, :])
    ok = remaining <= c[1:][None, :]
    last = (d - 2) - np.argmax(ok[:, ::-1], axis=1)
    counts_sorted = np.where(ok.any(axis=1), last + 1, 0)
    counts = np.empty(d, dtype=int)
    counts[order] = counts_sorted
    return counts


# ---- the weighted tests ----------------------------------------------------


def _observations(x: npt.ArrayLike, model: CorrelationModel) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dimension,):
        raise InvalidInputError(f"expected {model.dimension} observations, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("observations must be finite")
    return x


def _finish(
    kind: MethodKind,
    model: CorrelationModel,
    alpha: float,
    squared: np.ndarray,
) -> WeightedTestResult:
    weighted = squared / model.weights
    method = calibrate(model.weights, alpha, kind)
    transformed = np.asarray(kind.sf(weighted), dtype=float)
    return WeightedTestResult(
        method=method,
        pvalues=np.asarray(kind.sf(squared), dtype=float),
        transformed=transformed,
        weighted_stats=weighted,
        outcome=stepup(transformed, method.critical_constants),
    )


def evaluate_z(
    x: npt.ArrayLike,
    sigma: typing.Optional[npt.ArrayLike],
    alpha: float,
    *,
    model: typing.Optional[CorrelationModel] = None,
) -> WeightedTestResult:
    """Weighted BH on two-sided z tests of ``x ~ N(mu, sigma)``, with every intermediate."""
    alpha = check_alpha(alpha)
    model = model if model is not None else build_model(sigma)
    z = _observations(x, model) / model.scale
    return _finish(MethodKind.z(), model, alpha, z**2)


def evaluate_t(
    x: npt.ArrayLike,
    v: float,
    m: float,
    sigma: typing.Optional[npt.ArrayLike],
    alpha: float,
    *,
    model: typing.Optional[CorrelationModel] = None,
) -> WeightedTestResult:
    """Weighted BH on two-sided t tests: ``x ~ N(mu, tau^2 sigma)``, ``v ~ tau^2 chi^2_m``."""
    alpha = check_alpha(alpha)
    kind = MethodKind.t(m)
    v = float(v)
    if not (math.isfinite(v) and v > 0):
        raise InvalidInputError(f"variance statistic v must be positive, got {v!r}")
    model = model if model is not None else build_model(sigma)
    z = _observations(x, model) / model.scale
    return _finish(kind, model, alpha, kind.m * z**2 / v)


def weighted_bh_z(x: npt.ArrayLike, sigma: npt.ArrayLike, alpha: float) -> StepUpOutcome:
    return evaluate_z(x, sigma, alpha).outcome


def weighted_bh_t(x: npt.ArrayLike, v: float, m: float, sigma: npt.ArrayLike, alpha: float) -> StepUpOutcome:
    return evaluate_t(x, v, m, sigma, alpha).outcome
