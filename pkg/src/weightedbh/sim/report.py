"""Machine-readable simulation reports.

JSON documents carry ``"schema_version": 1`` and a list of per-scenario
objects; TSV has one row per scenario. Neither contains wall time or anything
else that varies between runs of the same scenarios, so two runs can be
compared byte for byte. Floats go out with 17 significant digits in TSV and as
Python's shortest round-tripping repr in JSON; undefined values are ``null`` /
``NA``.
"""

import json
import math
import typing

from .engine import FdrEstimate, SimulationReport
from .scenario import SCHEMA_VERSION, scenario_to_dict

__all__ = ["TSV_COLUMNS", "format_footer", "format_tsv", "report_to_dict", "reports_to_json"]

TSV_COLUMNS = (
    "d",
    "covariance",
    "method",
    "alpha",
    "fdr_direct",
    "se_direct",
    "fdr_loo",
    "se_loo",
    "power",
    "reps",
    "seed",
    "name",
    "nulls",
    "signal",
    "fdr_conditional",
    "se_conditional",
    "power_se",
    "plain_fdr",
    "plain_se",
    "plain_power",
    "simes_rate",
    "simes_se",
    "fdr_bound",
    "alpha1",
    "calibration_residual",
    "failures",
    "digest",
)


def _number(value: typing.Optional[float]) -> typing.Optional[float]:
    return None if value is None or math.isnan(value) else float(value)


def _estimate(estimate: typing.Optional[FdrEstimate]) -> typing.Optional[dict]:
    if estimate is None:
        return None
    return {
        "estimator": estimate.estimator,
        "mean": _number(estimate.mean_fdp),
        "std_error": _number(estimate.std_error),
        "replications": estimate.replications,
    }


def report_to_dict(report: SimulationReport) -> dict:
    return {
        "scenario": scenario_to_dict(report.scenario),
        "digest": report.digest,
        "fdr": {
            "direct": _estimate(report.direct),
            "leave_one_out": _estimate(report.leave_one_out),
            "conditional": _estimate(report.conditional),
            "bound": _number(report.fdr_bound),
        },
        "power": _number(report.power),
        "power_se": _number(report.power_se),
        "plain_bh": {"fdr": _estimate(report.plain_bh), "power": _number(report.plain_power)},
        "simes_rate": _estimate(report.simes_rate),
        "alpha1": report.alpha1,
        "calibration_residual": report.calibration_residual,
        "failures": report.failures,
    }


def reports_to_json(reports: typing.Iterable[SimulationReport]) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "reports": [report_to_dict(r) for r in reports]}
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _cell(value: typing.Any) -> str:
    if value is None:
        return "NA"
    if isinstance(value, float):
        return "NA" if math.isnan(value) else f"{value:.17g}"
    return str(value)


def _row(report: SimulationReport) -> typing.Tuple[typing.Any, ...]:
    s = report.scenario
    conditional = report.conditional
    return (
        s.dimension,
        s.covariance.label,
        s.method.label,
        s.alpha,
        report.direct.mean_fdp,
        report.direct.std_error,
        report.leave_one_out.mean_fdp,
        report.leave_one_out.std_error,
        report.power,
        s.replications,
        s.seed,
        s.name,
        len(s.nulls),
        s.signal,
        None if conditional is None else conditional.mean_fdp,
        None if conditional is None else conditional.std_error,
        report.power_se,
        report.plain_bh.mean_fdp,
        report.plain_bh.std_error,
        report.plain_power,
        report.simes_rate.mean_fdp,
        report.simes_rate.std_error,
        report.fdr_bound,
        report.alpha1,
        report.calibration_residual,
        report.failures,
        report.digest,
    )


def format_tsv(reports: typing.Iterable[SimulationReport]) -> str:
    lines = ["\t".join(TSV_COLUMNS)]
    lines += ["\t".join(_cell(v) for v in _row(r)) for r in reports]
    return "\n".join(lines) + "\n"


def format_footer(reports: typing.Sequence[SimulationReport], wall_time: float) -> str:
    """Human-readable summary for stderr; the only place wall time appears."""
    reps = sum(r.scenario.replications for r in reports)
    failures = sum(r.failures for r in reports)
    return f"{len(reports)} scenario(s), {reps} replications, {failures} failed, {wall_time:.2f} s"
