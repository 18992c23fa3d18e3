"""Replications, the FDR estimators built on them, and the reduction to a report.

Every replication draws from its own counter-based stream, a
:class:`numpy.random.Philox` generator keyed by ``(scenario.seed, rep_index)``,
so a replication's data do not depend on which process ran it or what ran
before it. Means are reduced with :func:`math.fsum`, which is exactly rounded
and therefore independent of the order the values arrive in; together these
make a report a function of the scenario alone, whatever the worker count.

Three estimates of the same FDR come out of each run:

- ``direct``: the mean of ``V / max(R, 1)``.
- ``leave-one-out``: the mean of ``sum_{i null} 1(P_i <= alpha_{R_-i + 1}) / (R_-i + 1)``.
  For a step-up rule this is the same random variable as the direct FDP,
  realisation by realisation.
- ``conditional``: the leave-one-out form with each indicator replaced by its
  probability given the other weighted statistics (and ``V`` for the t test),
  a noncentral chi-squared tail. Same expectation, smaller variance. Not
  available for regression scenarios.

The unweighted BH rule is run on the same draws for comparison.
"""

import concurrent.futures
import logging
import math
import time
import typing

import numpy as np

from ..corr import CorrelationModel, MeanSpec, build_model, conditional_noncentralities, mean_spec, sample_mvn
from ..dist import nc_chi2_sf
from ..errors import DegenerateFitError, InvalidParameterError, NumericalFailureError
from ..procedure import (
    CalibratedMethod,
    calibrate,
    fdr_upper_bound,
    leave_one_out_counts,
    simes_global,
    stepup,
)
from ..varselect import DesignPlan, fit_response, prepare_design, weighted_t_test
from .scenario import Scenario, covariance_matrix, regression_design, scenario_digest, scenario_mean

__all__ = [
    "MAX_FAILURE_RATE",
    "FdrEstimate",
    "ReplicationResult",
    "ScenarioPlan",
    "SimulationReport",
    "estimate_fdr_conditional",
    "estimate_fdr_direct",
    "estimate_fdr_leave_one_out",
    "leave_one_out_fdp",
    "plan_scenario",
    "replication_rng",
    "run_replication",
    "simulate",
    "summarize",
    "validate_report",
]

logger = logging.getLogger(__name__)

MAX_FAILURE_RATE = 1e-4

# Replications handed to a worker at a time.
_CHUNK = 256


class ScenarioPlan(typing.NamedTuple):
    """Everything a replication needs that does not depend on its draw."""

    scenario: Scenario
    method: CalibratedMethod
    null_mask: np.ndarray
    plain_constants: np.ndarray
    """``i * alpha / d``, the unweighted BH constants."""

    cutoffs: np.ndarray
    """``isf(alpha_k)`` for ``k = 1..d``: the statistic each critical constant corresponds to."""

    model: typing.Optional[CorrelationModel] = None
    mean: typing.Optional[MeanSpec] = None
    design: typing.Optional[DesignPlan] = None
    beta: typing.Optional[np.ndarray] = None


class ReplicationResult(typing.NamedTuple):
    fdp: float
    true_discoveries: int
    rejections: int
    rep_index: int
    false_count: int
    """V in ``V / max(R, 1)``: rejected true nulls."""

    loo_fdp: float
    conditional_fdr: float
    """NaN when the scenario has no conditional estimator."""

    plain_fdp: float
    plain_true_discoveries: int
    plain_rejections: int
    simes: bool
    """Whether the Simes test of the weighted statistics rejects the global null."""

    diagnostic: typing.Optional[str] = None
    """Set, with every value NaN, when the replication failed numerically."""

    @property
    def failed(self) -> bool:
        return self.diagnostic is not None


class FdrEstimate(typing.NamedTuple):
    mean_fdp: float
    std_error: float
    """Sample standard deviation over the square root of ``replications``."""

    replications: int
    estimator: str


class SimulationReport(typing.NamedTuple):
    scenario: Scenario
    digest: str
    direct: FdrEstimate
    leave_one_out: FdrEstimate
    conditional: typing.Optional[FdrEstimate]
    power: typing.Optional[float]
    """Mean fraction of false nulls rejected; None without false nulls."""

    power_se: typing.Optional[float]
    plain_bh: FdrEstimate
    plain_power: typing.Optional[float]
    simes_rate: FdrEstimate
    """Fraction of replications rejecting anything, as a mean with its standard error."""

    fdr_bound: float
    """``sum_{i null} sf(w_i isf(alpha1))``: what the FDR is guaranteed not to exceed."""

    alpha1: float
    calibration_residual: float
    failures: int
    wall_time: float
    """Seconds; informational, never written to machine-readable output."""


# ---- planning --------------------------------------------------------------


def plan_scenario(scenario: Scenario) -> ScenarioPlan:
    """Build the covariance model (or design), calibrate, and precompute cutoffs."""
    d = scenario.dimension
    null_mask = np.zeros(d, dtype=bool)
    null_mask[list(scenario.nulls)] = True
    plain_constants = (scenario.alpha / d) * np.arange(1, d + 1, dtype=float)

    if scenario.covariance.kind == "regression":
        cov = scenario.covariance
        design = prepare_design(regression_design(cov.n, d, cov.rho, cov.seed), scenario.alpha)
        # beta_hat has covariance A^-1 at unit noise, so this puts its standardised mean at `signal`.
        beta = scenario_mean(scenario, np.sqrt(np.diag(design.gram_inv)))
        method = design.method
        extras = dict(design=design, beta=beta)
    else:
        model = build_model(covariance_matrix(scenario.covariance, d))
        method = calibrate(model.weights, scenario.alpha, scenario.method)
        extras = dict(model=model, mean=mean_spec(model, scenario_mean(scenario, model.scale)))

    cutoffs = np.array([method.kind.isf(c) for c in method.critical_constants])
    logger.debug("planned %s: alpha1=%r, residual %.3g", scenario.name, method.alpha1, method.residual)
    return ScenarioPlan(scenario, method, null_mask, plain_constants, cutoffs, **extras)


def replication_rng(seed: int, rep_index: int) -> np.random.Generator:
    """The stream of replication ``rep_index``; identical wherever it is created."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(rep_index)])))


# ---- one replication -------------------------------------------------------


def leave_one_out_fdp(
    transformed: np.ndarray,
    constants: np.ndarray,
    null_mask: np.ndarray,
    counts: typing.Optional[np.ndarray] = None,
) -> float:
    """``sum_{i null} 1(P_i <= c_{R_-i + 1}) / (R_-i + 1)`` for one realisation.

    Indicators are tallied per denominator before dividing, so when every
    counted null shares the denominator ``R`` the result is ``V / R`` to the bit.
    """
    counts = leave_one_out_counts(transformed, constants) if counts is None else counts
    hits = null_mask & (transformed <= constants[counts])
    if not hits.any():
        return 0.0
    denominators, tallies = np.unique(counts[hits] + 1, return_counts=True)
    return math.fsum(int(t) / int(k) for k, t in zip(denominators, tallies))


def _conditional_fdr(
    plan: ScenarioPlan,
    y: np.ndarray,
    counts: np.ndarray,
    scale: float,
) -> float:
    nulls = plan.null_mask
    if not nulls.any():
        return 0.0
    lam = conditional_noncentralities(plan.model, y[None, :], plan.mean.delta[None, :])[0]
    k = counts[nulls]
    tails = nc_chi2_sf(scale * plan.cutoffs[k], 1.0, lam[nulls])
    return math.fsum(np.asarray(tails, dtype=float) / (k + 1))


def _failed(rep_index: int, exc: Exception) -> ReplicationResult:
    nan = float("nan")
    return ReplicationResult(nan, 0, 0, rep_index, 0, nan, nan, nan, 0, 0, False, f"{type(exc).__name__}: {exc}")


def run_replication(
    scenario: Scenario,
    rep_index: int,
    plan: typing.Optional[ScenarioPlan] = None,
) -> ReplicationResult:
    """Draw replication ``rep_index``, test it, and score it against the true nulls.

    A :class:`~weightedbh.errors.NumericalFailureError` (or a degenerate
    regression fit) does not propagate: the result comes back with
    ``diagnostic`` set so the run can count and exclude it.
    """
    plan = plan_scenario(scenario) if plan is None else plan
    kind = plan.method.kind
    rng = replication_rng(scenario.seed, rep_index)
    try:
        if plan.design is not None:
            n = plan.design.design.shape[0]
            fit = fit_response(plan.design, plan.design.design @ plan.beta + rng.standard_normal(n))
            result = weighted_t_test(plan.design, fit)
            transformed, pvalues, outcome = result.transformed, result.pvalues, result.outcome
            y = None
            scale = float("nan")
        else:
            x = sample_mvn(plan.model, plan.mean, rng)
            z = x / plan.model.scale
            if kind.kind == "t":
                variance_stat = float(rng.chisquare(kind.m))
                squared = kind.m * z**2 / variance_stat
                scale = variance_stat / kind.m
            else:
                squared = z**2
                scale = 1.0
            y = z / np.sqrt(plan.model.weights)
            transformed = np.asarray(kind.sf(squared / plan.model.weights), dtype=float)
            pvalues = np.asarray(kind.sf(squared), dtype=float)
            outcome = stepup(transformed, plan.method.critical_constants)
    except (NumericalFailureError, DegenerateFitError) as exc:
        logger.warning("replication %d of %s failed: %s", rep_index, scenario.name, exc)
        return _failed(rep_index, exc)

    constants = plan.method.critical_constants
    rejected = np.zeros(scenario.dimension, dtype=bool)
    rejected[list(outcome.rejected)] = True
    false_count = int(np.sum(rejected & plan.null_mask))
    counts = leave_one_out_counts(transformed, constants)

    plain = stepup(pvalues, plan.plain_constants)
    plain_rejected = np.zeros(scenario.dimension, dtype=bool)
    plain_rejected[list(plain.rejected)] = True
    plain_false = int(np.sum(plain_rejected & plan.null_mask))

    return ReplicationResult(
        fdp=false_count / max(outcome.rejections, 1),
        true_discoveries=outcome.rejections - false_count,
        rejections=outcome.rejections,
        rep_index=int(rep_index),
        false_count=false_count,
        loo_fdp=leave_one_out_fdp(transformed, constants, plan.null_mask, counts),
        conditional_fdr=float("nan") if y is None else _conditional_fdr(plan, y, counts, scale),
        plain_fdp=plain_false / max(plain.rejections, 1),
        plain_true_discoveries=plain.rejections - plain_false,
        plain_rejections=plain.rejections,
        simes=simes_global(transformed, plan.method.alpha1),
    )


def _run_chunk(plan: ScenarioPlan, start: int, stop: int) -> typing.List[ReplicationResult]:
    return [run_replication(plan.scenario, r, plan) for r in range(start, stop)]


# ---- reduction -------------------------------------------------------------


def _mean_and_se(values: typing.Sequence[float]) -> typing.Tuple[float, float]:
    n = len(values)
    if n == 0:
        return float("nan"), float("nan")
    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def _estimate(values: typing.Sequence[float], estimator: str) -> FdrEstimate:
    mean, se = _mean_and_se(values)
    return FdrEstimate(mean, se, len(values), estimator)


def summarize(
    plan: ScenarioPlan,
    results: typing.Sequence[ReplicationResult],
    wall_time: float = 0.0,
) -> SimulationReport:
    """Reduce per-replication results to a report. Failed replications are excluded and counted."""
    scenario = plan.scenario
    ok = sorted((r for r in results if not r.failed), key=lambda r: r.rep_index)
    failures = len(results) - len(ok)
    if failures:
        logger.warning("%s: %d of %d replications failed and were excluded", scenario.name, failures, len(results))

    n_alt = scenario.dimension - len(scenario.nulls)
    power = power_se = plain_power = None
    if n_alt and ok:
        power, power_se = _mean_and_se([r.true_discoveries / n_alt for r in ok])
        plain_power = _mean_and_se([r.plain_true_discoveries / n_alt for r in ok])[0]

    method = plan.method
    return SimulationReport(
        scenario=scenario,
        digest=scenario_digest(scenario),
        direct=_estimate([r.fdp for r in ok], "direct"),
        leave_one_out=_estimate([r.loo_fdp for r in ok], "leave-one-out"),
        conditional=None if plan.design is not None else _estimate([r.conditional_fdr for r in ok], "conditional"),
        power=power,
        power_se=power_se,
        plain_bh=_estimate([r.plain_fdp for r in ok], "plain-bh"),
        plain_power=plain_power,
        simes_rate=_estimate([float(r.simes) for r in ok], "simes"),
        fdr_bound=fdr_upper_bound(method.weights, method.alpha1, method.kind, scenario.nulls),
        alpha1=method.alpha1,
        calibration_residual=method.residual,
        failures=failures,
        wall_time=wall_time,
    )


def simulate(scenario: Scenario, workers: int = 1) -> SimulationReport:
    """Run every replication of ``scenario`` on ``workers`` processes and summarise.

    :raises InvalidParameterError: if ``workers < 1``.
    """
    if isinstance(workers, bool) or int(workers) != workers or workers < 1:
        raise InvalidParameterError(f"worker count must be an integer >= 1, got {workers!r}")
    t0 = time.perf_counter()
    plan = plan_scenario(scenario)
    reps = scenario.replications
    chunks = [(start, min(start + _CHUNK, reps)) for start in range(0, reps, _CHUNK)]
    logger.info("%s: %d replications on %d worker(s)", scenario.name, reps, workers)

    results: typing.List[ReplicationResult] = []
    if workers == 1 or len(chunks) == 1:
        for start, stop in chunks:
            results.extend(_run_chunk(plan, start, stop))
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=int(workers)) as pool:
            futures = [pool.submit(_run_chunk, plan, start, stop) for start, stop in chunks]
            for future in futures:
                results.extend(future.result())

    report = summarize(plan, results, time.perf_counter() - t0)
    logger.info(
        "%s: FDR %.4g (se %.2g), %d failures, %.1f s",
        scenario.name,
        report.direct.mean_fdp,
        report.direct.std_error,
        report.failures,
        report.wall_time,
    )
    return report


def estimate_fdr_direct(scenario: Scenario, workers: int = 1) -> FdrEstimate:
    """Monte Carlo mean of the false discovery proportion."""
    return simulate(scenario, workers).direct


def estimate_fdr_leave_one_out(scenario: Scenario, workers: int = 1) -> FdrEstimate:
    return simulate(scenario, workers).leave_one_out


def estimate_fdr_conditional(scenario: Scenario, workers: int = 1) -> FdrEstimate:
    """Rao-Blackwellised leave-one-out estimate.

    :raises InvalidParameterError: for regression scenarios, which have no
        closed-form conditional law.
    """
    if scenario.covariance.kind == "regression":
        raise InvalidParameterError("the conditional estimator is not available for regression scenarios")
    return simulate(scenario, workers).conditional


def validate_report(report: SimulationReport, *, k_se: float = 3.0) -> typing.List[str]:
    """Reasons ``report`` fails validation; empty when it passes.

    A report fails when more than :data:`MAX_FAILURE_RATE` of its replications
    failed, or when an FDR estimate of the weighted method exceeds
    ``alpha + k_se * SE``.
    """
    problems = []
    alpha = report.scenario.alpha
    rate = report.failures / report.scenario.replications
    if rate > MAX_FAILURE_RATE:
        problems.append(f"failure rate {rate:.3g} exceeds {MAX_FAILURE_RATE:g}")
    for estimate in (report.direct, report.leave_one_out, report.conditional):
        if estimate is None or estimate.replications == 0:
            continue
        limit = alpha + k_se * estimate.std_error
        if estimate.mean_fdp > limit:
            problems.append(
                f"{estimate.estimator} FDR {estimate.mean_fdp:.6g} exceeds alpha + {k_se:g} SE = {limit:.6g}"
            )
    return problems
