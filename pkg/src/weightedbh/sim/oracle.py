"""Empirical check of the conditional law of a weighted statistic.

Given the others, a null coordinate's weighted statistic ``Y_i`` is normal with
unit variance and mean ``-gamma_{-i,i}' (Y_-i - delta_-i)``, so ``Y_i^2`` is
noncentral chi-squared with one degree of freedom and noncentrality
``lambda_i``. The check draws ``Y``, groups the draws by ``lambda_i``, and
compares how often ``Y_i^2`` exceeds each threshold in a group with the average
of ``nc_chi2_sf`` over the same draws.
"""

import logging
import math
import typing

import numpy as np
import numpy.typing as npt

from ..corr import CorrelationModel, conditional_noncentralities, mean_spec, sample_mvn
from ..dist import nc_chi2_sf
from ..errors import InvalidInputError, InvalidParameterError

__all__ = ["BinCheck", "ConditionalLawCheck", "lemma2_conditional_check"]

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.5, 2.0, 3.841458820694124)


class BinCheck(typing.NamedTuple):
    lam_low: float
    lam_high: float
    count: int
    threshold: float
    empirical: float
    expected: float
    std_error: float

    @property
    def deviation(self) -> float:
        return abs(self.empirical - self.expected)

    @property
    def z_score(self) -> float:
        if self.deviation == 0.0:
            return 0.0
        return self.deviation / self.std_error if self.std_error > 0 else math.inf


class ConditionalLawCheck(typing.NamedTuple):
    index: int
    draws: int
    bins: int
    """Bins actually used, after any widening."""

    rows: typing.Tuple[BinCheck, ...]

    @property
    def max_deviation(self) -> float:
        return max(row.deviation for row in self.rows)

    @property
    def max_z(self) -> float:
        return max(row.z_score for row in self.rows)

    def within(self, k_se: float = 3.0) -> bool:
        return self.max_z <= k_se


def _bin_edges(lam: np.ndarray, bins: int) -> np.ndarray:
    edges = np.unique(np.quantile(lam, np.linspace(0.0, 1.0, bins + 1)))
    if edges.size == 1:
        edges = np.array([edges[0], edges[0]])
    return edges


def lemma2_conditional_check(
    model: CorrelationModel,
    i: int,
    draws: int,
    *,
    seed: int = 0,
    mu: typing.Optional[npt.ArrayLike] = None,
    thresholds: typing.Sequence[float] = DEFAULT_THRESHOLDS,
    bins: int = 10,
    min_per_bin: int = 1000,
) -> ConditionalLawCheck:
    """Compare the conditional exceedance rates of ``Y_i^2`` with the noncentral chi-squared law.

    Draws are binned by quantiles of ``lambda_i``. The expected rate in a bin is
    the mean of ``nc_chi2_sf(t, 1, lambda)`` over its draws, and its standard
    error is ``sqrt(sum p (1 - p)) / count``. When some bin would hold fewer
    than ``min_per_bin`` draws the number of bins is halved, with a warning,
    until none does or a single bin remains.

    :param mu: Mean of ``X``; zero by default. ``mu[i]`` must be 0.
    :raises InvalidInputError: if ``i`` is out of range or ``mu[i] != 0``.
    :raises InvalidParameterError: for non-positive ``draws`` or ``bins``, or a
        negative threshold.
    """
    d = model.dimension
    if not 0 <= i < d:
        raise InvalidInputError(f"index {i} out of range for dimension {d}")
    if int(draws) != draws or draws < 1 or int(bins) != bins or bins < 1:
        raise InvalidParameterError(f"draws and bins must be positive integers, got {draws!r} and {bins!r}")
    thresholds = tuple(float(t) for t in thresholds)
    if any(not t >= 0 for t in thresholds):
        raise InvalidParameterError(f"thresholds must be non-negative, got {thresholds}")
    mean = mean_spec(model, np.zeros(d) if mu is None else mu)
    if mean.mu[i] != 0:
        raise InvalidInputError(f"coordinate {i} must have zero mean, got {mean.mu[i]!r}")

    rng = np.random.default_rng(seed)
    y = sample_mvn(model, mean, rng, size=int(draws)) / (model.scale * np.sqrt(model.weights))
    lam = conditional_noncentralities(model, y, mean.delta)[:, i]
    y2 = y[:, i] ** 2

    bins = int(bins)
    edges = _bin_edges(lam, bins)
    which = np.clip(np.searchsorted(edges, lam, side="right") - 1, 0, edges.size - 2)
    while bins > 1 and np.bincount(which, minlength=edges.size - 1).min() < min_per_bin:
        bins //= 2
        logger.warning("fewer than %d draws in some bin; widening to %d bins", min_per_bin, bins)
        edges = _bin_edges(lam, bins)
        which = np.clip(np.searchsorted(edges, lam, side="right") - 1, 0, edges.size - 2)

    rows = []
    for b in range(edges.size - 1):
        members = which == b
        count = int(members.sum())
        if count == 0:
            continue
        for t in thresholds:
            p = np.asarray(nc_chi2_sf(t, 1.0, lam[members]), dtype=float)
            rows.append(
                BinCheck(
                    lam_low=float(edges[b]),
                    lam_high=float(edges[b + 1]),
                    count=count,
                    threshold=t,
                    empirical=float(np.mean(y2[members] >= t)),
                    expected=math.fsum(p) / count,
                    std_error=math.sqrt(math.fsum(p * (1.0 - p))) / count,
                )
            )
    return ConditionalLawCheck(index=int(i), draws=int(draws), bins=edges.size - 1, rows=tuple(rows))
