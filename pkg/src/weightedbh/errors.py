"""Exceptions raised across the package, and the exit code each one maps to.

Each class subclasses the builtin a caller would naturally reach for, so code
that only knows ``except ValueError`` still catches a bad alpha or a
non-positive-definite matrix. The shared :class:`WeightedBHError` base is what
the CLI catches to pick an exit code.
"""

import typing

__all__ = [
    "EXIT_INVALID_INPUT",
    "EXIT_NUMERICAL_FAILURE",
    "DecompositionError",
    "DegenerateFitError",
    "InvalidInputError",
    "InvalidParameterError",
    "NumericalFailureError",
    "WeightedBHError",
    "exit_code",
]

EXIT_INVALID_INPUT = 2
EXIT_NUMERICAL_FAILURE = 3


class WeightedBHError(Exception):
    """Base for every error this package raises on purpose."""

    exit_code: int = EXIT_INVALID_INPUT


class InvalidParameterError(WeightedBHError, ValueError):
    """A scalar argument outside its admissible range (a level, a dof, a tail probability)."""


class InvalidInputError(WeightedBHError, ValueError):
    """Array input of the wrong shape, asymmetric, non-finite, or otherwise unusable."""


class DecompositionError(InvalidInputError):
    """A matrix that should be positive definite is not.

    :param pivot: 0-based index of the first leading minor that failed.
    """

    def __init__(self, message: str, pivot: typing.Optional[int] = None) -> None:
        super().__init__(message)
        self.pivot = pivot


class DegenerateFitError(InvalidInputError):
    """A regression whose residual variance is zero for all practical purposes."""


class NumericalFailureError(WeightedBHError, ArithmeticError):
    """A solver ran out of iterations or produced a non-finite value."""

    exit_code = EXIT_NUMERICAL_FAILURE


def exit_code(exc: BaseException) -> int:
    """Process exit code for ``exc``; anything unknown counts as invalid input."""
    return getattr(exc, "exit_code", EXIT_INVALID_INPUT)
