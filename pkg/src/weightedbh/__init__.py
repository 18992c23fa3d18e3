"""Weighted Benjamini-Hochberg tests with FDR control for correlated normal statistics."""

from .corr import CorrelationModel, build_model, equicorrelated_weight
from .errors import (
    DecompositionError,
    DegenerateFitError,
    InvalidInputError,
    InvalidParameterError,
    NumericalFailureError,
    WeightedBHError,
)
from .procedure import (
    CalibratedMethod,
    MethodKind,
    StepUpOutcome,
    calibrate,
    calibrate_alpha1,
    plain_bh,
    stepup,
    weighted_bh_t,
    weighted_bh_z,
)
from .varselect import RegressionProblem, regression_problem, select_variables

try:
    from .__version__ import __version__ as __version__
except ImportError:
    __version__ = "0.0.0"

__all__ = [
    "CalibratedMethod",
    "CorrelationModel",
    "DecompositionError",
    "DegenerateFitError",
    "InvalidInputError",
    "InvalidParameterError",
    "MethodKind",
    "NumericalFailureError",
    "RegressionProblem",
    "StepUpOutcome",
    "WeightedBHError",
    "build_model",
    "calibrate",
    "calibrate_alpha1",
    "equicorrelated_weight",
    "plain_bh",
    "regression_problem",
    "select_variables",
    "stepup",
    "weighted_bh_t",
    "weighted_bh_z",
]
