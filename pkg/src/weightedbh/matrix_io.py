"""Reading matrices and vectors for the command line.

CSV files are comma separated and row major. A first row with any cell that
does not parse as a number is taken to be a header and skipped.
"""

import json
import logging
import typing

import numpy as np

from .errors import InvalidInputError

__all__ = ["has_header", "read_json", "read_matrix", "read_vector"]

logger = logging.getLogger(__name__)


def has_header(path: str) -> bool:
    """Whether the first non-blank line of ``path`` holds anything other than numbers."""
    try:
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    break
            else:
                raise InvalidInputError(f"{path} is empty")
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    for cell in line.split(","):
        try:
            float(cell)
        except ValueError:
            return True
    return False


def _load(path: str, ndmin: int) -> np.ndarray:
    skip = 1 if has_header(path) else 0
    if skip:
        logger.debug("%s: skipping header row", path)
    try:
        arr = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=ndmin, dtype=float)
    except ValueError as exc:
        raise InvalidInputError(f"{path} is not a numeric CSV: {exc}") from exc
    if arr.size == 0:
        raise InvalidInputError(f"{path} holds no values")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{path} contains non-finite values")
    return arr


def read_matrix(path: str) -> np.ndarray:
    """A 2-D array, one CSV row per matrix row. A single column reads as ``n x 1``."""
    return _load(path, ndmin=2)


def read_vector(path: str) -> np.ndarray:
    """A 1-D array from a CSV holding one row or one column."""
    arr = _load(path, ndmin=2)
    if arr.shape[0] != 1 and arr.shape[1] != 1:
        raise InvalidInputError(f"{path} must hold a single row or column, got shape {arr.shape}")
    return arr.ravel()


def read_json(path: str) -> typing.Any:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path} is not valid JSON: {exc}") from exc
