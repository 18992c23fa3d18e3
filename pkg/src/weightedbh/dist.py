"""Tail probabilities of the chi-squared and F laws behind two-sided z and t tests.

Survival functions come straight from :mod:`scipy.special`. Inverses start from
scipy's quantile and are polished with :func:`~weightedbh._roots.newton_bisect`
until ``sf(isf(u))`` reproduces ``u`` to :data:`ROUND_TRIP_RTOL`; the
calibration solver composes these maps many times and needs them to be exact
inverses, not merely close.

The noncentral chi-squared law is evaluated as its Poisson mixture of central
laws, ``Pr[chi'^2_n(lam) >= x] = E_J[sf_{n + 2J}(x)]`` with ``J ~ Poisson(lam/2)``,
summed over a window around the mode of ``J`` wide enough that the Poisson mass
left outside is below :data:`POISSON_TAIL`. Poisson weights come from
``scipy.stats.poisson.pmf``, which works in log space, so large noncentralities
do not underflow.

The three ``lemma*_ratio`` functions are diagnostics: each is a ratio whose
monotonicity in one argument is what the FDR guarantees rest on, evaluated
numerically so the property tests can check it over grids.
"""

import logging
import math
import typing

import numpy as np
import numpy.typing as npt
from scipy import special, stats

from ._roots import newton_bisect
from .errors import InvalidParameterError

__all__ = [
    "MIN_TAIL",
    "POISSON_TAIL",
    "ROUND_TRIP_RTOL",
    "ChiSquareLaw",
    "FLaw",
    "NoncentralChiSquareLaw",
    "check_tail",
    "chi2_isf",
    "chi2_pdf",
    "chi2_sf",
    "f_isf",
    "f_pdf",
    "f_sf",
    "lemma3_ratio",
    "lemma4_ratio",
    "lemma5_ratio",
    "nc_chi2_sf",
]

logger = logging.getLogger(__name__)

ROUND_TRIP_RTOL = 1e-12
POISSON_TAIL = 1e-14
MIN_TAIL = 1e-300

# Cap on (values x mixture terms) evaluated at once by nc_chi2_sf.
_MIXTURE_BLOCK = 4_000_000

ArrayLike = typing.Union[float, npt.ArrayLike]


# ---- validation ------------------------------------------------------------


def _check_dof(name: str, value: float) -> float:
    value = float(value)
    if not (math.isfinite(value) and value > 0):
        raise InvalidParameterError(f"{name} must be a positive finite number, got {value!r}")
    return value


def check_tail(u: float) -> float:
    """Validate a tail probability destined for an inverse survival function.

    :raises InvalidParameterError: unless ``MIN_TAIL <= u < 1``. Values below
        :data:`MIN_TAIL` are rejected rather than extrapolated.
    """
    u = float(u)
    if not (0.0 < u < 1.0):
        raise InvalidParameterError(f"tail probability must lie in (0, 1), got {u!r}")
    if u < MIN_TAIL:
        raise InvalidParameterError(f"tail probability {u!r} is below the supported minimum {MIN_TAIL!r}")
    return u


def _nonneg(x: ArrayLike, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise InvalidParameterError(f"{name} must be non-negative, got {x!r}")
    return arr


def _out(arr: np.ndarray) -> typing.Union[float, np.ndarray]:
    return float(arr) if arr.ndim == 0 else arr


# ---- central chi-squared ---------------------------------------------------


def chi2_sf(x: ArrayLike, n: float) -> typing.Union[float, np.ndarray]:
    """``Pr[chi^2_n >= x]``. Vectorised over ``x``; ``chi2_sf(0, n) == 1``."""
    n = _check_dof("n", n)
    return _out(special.chdtrc(n, _nonneg(x)))


def chi2_pdf(x: ArrayLike, n: float) -> typing.Union[float, np.ndarray]:
    n = _check_dof("n", n)
    return _out(stats.chi2.pdf(_nonneg(x), n))


def _polished_isf(
    u: float,
    x0: float,
    sf: typing.Callable[[float], float],
    pdf: typing.Callable[[float], float],
) -> float:
    """Refine a quantile estimate ``x0`` so that ``sf(x)`` matches ``u``."""
    if not (math.isfinite(x0) and x0 > 0):
        x0 = 1.0
    if abs(sf(x0) - u) <= 0.1 * ROUND_TRIP_RTOL * u:
        return x0
    lo, hi = x0, x0
    step = 1e-8
    while sf(lo) < u and lo > 0.0:
        lo = lo * (1.0 - step) if step < 1.0 else 0.0
        step *= 4.0
    step = 1e-8
    while sf(hi) > u:
        hi *= 1.0 + step
        step *= 4.0
    return newton_bisect(
        lambda x: sf(x) - u,
        lambda x: -pdf(x),
        lo,
        hi,
        x0=x0,
        ftol=0.1 * ROUND_TRIP_RTOL * u,
    )


def chi2_isf(u: float, n: float) -> float:
    """The ``x`` with ``chi2_sf(x, n) == u``.

    :raises InvalidParameterError: for ``u`` outside ``[MIN_TAIL, 1)`` or a bad ``n``.
    """
    u = check_tail(u)
    n = _check_dof("n", n)
    return _polished_isf(
        u,
        float(special.chdtri(n, u)),
        lambda x: float(special.chdtrc(n, x)),
        lambda x: float(stats.chi2.pdf(x, n)),
    )


# ---- noncentral chi-squared ------------------------------------------------


def _mixture_window(half_lam: np.ndarray) -> typing.Tuple[int, int]:
    """Poisson indices covering all but POISSON_TAIL of the mass for every mean."""
    lo = int(stats.poisson.ppf(0.5 * POISSON_TAIL, float(half_lam.min())))
    hi = int(stats.poisson.isf(0.5 * POISSON_TAIL, float(half_lam.max())))
    return max(lo, 0), max(hi, 0)


def nc_chi2_sf(x: ArrayLike, n: float, lam: ArrayLike) -> typing.Union[float, np.ndarray]:
    """``Pr[chi'^2_n(lam) >= x]``, broadcasting ``x`` against ``lam``.

    ``lam == 0`` returns :func:`chi2_sf` itself, not a one-term mixture, so the
    central case is reproduced exactly. ``x == 0`` gives exactly 1.
    """
    n = _check_dof("n", n)
    xb, lamb = np.broadcast_arrays(_nonneg(x), _nonneg(lam, "lam"))
    shape = xb.shape
    xf = xb.ravel()
    lamf = lamb.ravel()
    out = special.chdtrc(n, xf)

    nz = np.flatnonzero((lamf > 0) & (xf > 0))
    if nz.size:
        half = 0.5 * lamf[nz]
        # Sort so each block spans a narrow range of means and so a narrow window.
        order = np.argsort(half, kind="stable")
        idx_sorted = nz[order]
        half_sorted = half[order]
        start = 0
        while start < half_sorted.size:
            j_lo, j_hi = _mixture_window(half_sorted[start : start + 1])
            width = j_hi - j_lo + 1
            stop = min(half_sorted.size, start + max(1, _MIXTURE_BLOCK // max(width, 1)))
            block = half_sorted[start:stop]
            j_lo, j_hi = _mixture_window(block)
            # Widening the window for the whole block can exceed the budget; shrink the block until it fits.
            while stop - start > 1 and (stop - start) * (j_hi - j_lo + 1) > _MIXTURE_BLOCK:
                stop = start + max(1, (stop - start) // 2)
                block = half_sorted[start:stop]
                j_lo, j_hi = _mixture_window(block)
            j = np.arange(j_lo, j_hi + 1, dtype=float)
            weights = stats.poisson.pmf(j[None, :], block[:, None])
            tails = special.chdtrc(n + 2.0 * j[None, :], xf[idx_sorted[start:stop], None])
            out[idx_sorted[start:stop]] = np.sum(weights * tails, axis=1)
            logger.debug("nc_chi2_sf: %d values over Poisson window [%d, %d]", stop - start, j_lo, j_hi)
            start = stop

    return _out(np.clip(out, 0.0, 1.0).reshape(shape))


# ---- central F -------------------------------------------------------------


def f_sf(x: ArrayLike, m: float, n: float) -> typing.Union[float, np.ndarray]:
    """``Pr[F_{m,n} >= x]``. Vectorised over ``x``; ``f_sf(0, m, n) == 1``."""
    m = _check_dof("m", m)
    n = _check_dof("n", n)
    return _out(special.fdtrc(m, n, _nonneg(x)))


def f_pdf(x: ArrayLike, m: float, n: float) -> typing.Union[float, np.ndarray]:
    m = _check_dof("m", m)
    n = _check_dof("n", n)
    return _out(stats.f.pdf(_nonneg(x), m, n))


def f_isf(u: float, m: float, n: float) -> float:
    """The ``x`` with ``f_sf(x, m, n) == u``."""
    u = check_tail(u)
    m = _check_dof("m", m)
    n = _check_dof("n", n)
    return _polished_isf(
        u,
        float(stats.f.isf(u, m, n)),
        lambda x: float(special.fdtrc(m, n, x)),
        lambda x: float(stats.f.pdf(x, m, n)),
    )


# ---- laws as values --------------------------------------------------------


class ChiSquareLaw(typing.NamedTuple):
    """Central chi-squared with ``dof`` degrees of freedom (any positive real)."""

    dof: float

    def sf(self, x: ArrayLike) -> typing.Union[float, np.ndarray]:
        return chi2_sf(x, self.dof)

    def isf(self, u: float) -> float:
        return chi2_isf(u, self.dof)

    def pdf(self, x: ArrayLike) -> typing.Union[float, np.ndarray]:
        return chi2_pdf(x, self.dof)


class NoncentralChiSquareLaw(typing.NamedTuple):
    """Noncentral chi-squared; ``noncentrality == 0`` is the central law."""

    dof: float
    noncentrality: float

    def sf(self, x: ArrayLike) -> typing.Union[float, np.ndarray]:
        return nc_chi2_sf(x, self.dof, self.noncentrality)


class FLaw(typing.NamedTuple):
    """Central F with ``num_dof`` and ``den_dof`` degrees of freedom."""

    num_dof: float
    den_dof: float

    def sf(self, x: ArrayLike) -> typing.Union[float, np.ndarray]:
        return f_sf(x, self.num_dof, self.den_dof)

    def isf(self, u: float) -> float:
        return f_isf(u, self.num_dof, self.den_dof)

    def pdf(self, x: ArrayLike) -> typing.Union[float, np.ndarray]:
        return f_pdf(x, self.num_dof, self.den_dof)


# ---- monotone-ratio diagnostics --------------------------------------------


def lemma3_ratio(u: float, n: float, lam: float) -> float:
    """``Pr[chi'^2_n(lam) >= chi2_isf(u, n)] / u``; nonincreasing in ``u``."""
    lam = float(_nonneg(lam, "lam"))
    return float(nc_chi2_sf(chi2_isf(u, n), n, lam)) / u


def lemma4_ratio(theta: float, w: float, w_prime: float, n: float) -> float:
    """``chi2_sf(theta * w, n) / chi2_sf(theta * w_prime, n)``; nondecreasing in ``theta``.

    :raises InvalidParameterError: unless ``0 < w <= w_prime`` and ``theta > 0``.
    """
    theta = _check_dof("theta", theta)
    w = _check_dof("w", w)
    w_prime = _check_dof("w_prime", w_prime)
    if w > w_prime:
        raise InvalidParameterError(f"lemma4_ratio needs w <= w_prime, got w={w!r}, w_prime={w_prime!r}")
    return float(chi2_sf(theta * w, n)) / float(chi2_sf(theta * w_prime, n))


def lemma5_ratio(u: float, m: float, n: float, h: float) -> float:
    """``f_sf(f_isf(u, m, n), m + h, n) / u``; nonincreasing in ``u``."""
    h = float(_nonneg(h, "h"))
    return float(f_sf(f_isf(u, m, n), m + h, n)) / u
