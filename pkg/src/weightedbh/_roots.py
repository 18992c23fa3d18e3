"""Safeguarded Newton iteration for monotone scalar equations.

Every root this package needs (inverse survival functions and the calibration
constant) is the unique crossing of a continuous monotone function, so a
bracket is always available. Newton steps are taken while they stay inside the
bracket and shrink it fast enough; otherwise the step is a bisection.
"""

import logging
import math
import typing

from .errors import NumericalFailureError

__all__ = ["MAX_ITER", "newton_bisect"]

logger = logging.getLogger(__name__)

MAX_ITER = 200


def newton_bisect(
    func: typing.Callable[[float], float],
    dfunc: typing.Callable[[float], float],
    lo: float,
    hi: float,
    *,
    x0: typing.Optional[float] = None,
    ftol: float = 0.0,
    xrtol: float = 4 * 2.0**-52,
    maxiter: int = MAX_ITER,
) -> float:
    """Root of ``func`` in ``[lo, hi]``.

    :param func: Continuous on the bracket, with opposite signs (or a zero) at
        its ends. Either orientation works.
    :param dfunc: Derivative of ``func``. Only used to propose steps, so an
        inaccurate derivative costs iterations, not correctness.
    :param x0: Starting point. Defaults to the midpoint; ignored if outside the
        bracket.
    :param ftol: Accept ``x`` as soon as ``|func(x)| <= ftol``.
    :param xrtol: Accept once a step moves ``x`` by no more than this fraction.
    :raises NumericalFailureError: if the ends do not bracket a root, ``func``
        returns a non-finite value, or ``maxiter`` steps do not converge.
    """
    f_lo = func(lo)
    f_hi = func(hi)
    if not (math.isfinite(f_lo) and math.isfinite(f_hi)):
        raise NumericalFailureError(f"non-finite function value at bracket [{lo!r}, {hi!r}]")
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if (f_lo > 0) == (f_hi > 0):
        raise NumericalFailureError(f"[{lo!r}, {hi!r}] does not bracket a root (f = {f_lo!r}, {f_hi!r})")

    # x_neg always has func < 0, x_pos always func > 0.
    x_neg, x_pos = (lo, hi) if f_lo < 0 else (hi, lo)
    x = x0 if x0 is not None and min(lo, hi) <= x0 <= max(lo, hi) else 0.5 * (lo + hi)
    fx = func(x)
    dx_old = abs(hi - lo)
    dx = dx_old

    for iteration in range(maxiter):
        if not math.isfinite(fx):
            raise NumericalFailureError(f"non-finite function value at x = {x!r}")
        if abs(fx) <= ftol:
            logger.debug("newton_bisect converged on ftol after %d steps", iteration)
            return x
        dfx = dfunc(x)
        newton_ok = (
            math.isfinite(dfx)
            and dfx != 0.0
            and ((x - x_pos) * dfx - fx) * ((x - x_neg) * dfx - fx) < 0.0
            and abs(2.0 * fx) <= abs(dx_old * dfx)
        )
        dx_old = dx
        if newton_ok:
            dx = fx / dfx
            x_new = x - dx
        else:
            dx = 0.5 * (x_pos - x_neg)
            x_new = x_neg + dx
        if x_new == x or abs(x_new - x) <= xrtol * abs(x_new):
            logger.debug("newton_bisect converged on step size after %d steps", iteration + 1)
            return x_new
        x = x_new
        fx = func(x)
        if fx < 0.0:
            x_neg = x
        else:
            x_pos = x

    raise NumericalFailureError(f"no convergence within {maxiter} iterations (last x = {x!r}, f = {fx!r})")
