"""weighted-bh: calibrate, run and simulate weighted BH tests from the command line.

Every command prints its result to stdout (JSON for ``calibrate``, ``test`` and
``select``; JSON or TSV for ``simulate``) and logs to stderr. Exit codes: 0 on
success, 2 for invalid input or parameters, 3 when a numerical solver fails.
"""

import json
import logging
import sys
import time
import typing
from enum import Enum

import numpy as np
import typer

from . import matrix_io
from .corr import build_model
from .errors import InvalidParameterError, WeightedBHError, exit_code
from .procedure import MethodKind, calibrate, check_alpha, evaluate_t, evaluate_z
from .sim.engine import simulate, validate_report
from .sim.report import format_footer, format_tsv, reports_to_json
from .sim.scenario import SCHEMA_VERSION, load_scenarios
from .varselect import evaluate_selection, regression_problem, t_squared

logger = logging.getLogger(__name__)

LOGLEVEL_ENV = "WEIGHTEDBH_LOGLEVEL"

app = typer.Typer(
    add_completion=False,
    no_args_is_help=True,
    help="Weighted Benjamini-Hochberg tests for correlated two-sided z and t statistics.",
)


class Mode(str, Enum):
    z = "z"
    t = "t"


class OutputFormat(str, Enum):
    json = "json"
    tsv = "tsv"


class RunConfig(typing.NamedTuple):
    """One command's settings, assembled from its options and checked before any work."""

    command: str
    alpha: typing.Optional[float] = None
    mode: Mode = Mode.z
    m: typing.Optional[float] = None
    v: typing.Optional[float] = None
    sigma: typing.Optional[str] = None
    stats: typing.Optional[str] = None
    design: typing.Optional[str] = None
    response: typing.Optional[str] = None
    scenario: typing.Optional[str] = None
    seed: typing.Optional[int] = None
    reps: typing.Optional[int] = None
    workers: int = 1
    output_format: OutputFormat = OutputFormat.json
    output: typing.Optional[str] = None

    @property
    def method(self) -> MethodKind:
        return MethodKind.parse(self.mode.value, self.m)


REQUIRED_PATHS = {
    "calibrate": ("sigma",),
    "test": ("sigma", "stats"),
    "select": ("design", "response"),
    "simulate": ("scenario",),
}


def check_config(config: RunConfig) -> RunConfig:
    """:raises InvalidParameterError: for a missing path, a bad level, or ``m``/``v`` not matching the mode."""
    for field in REQUIRED_PATHS[config.command]:
        if getattr(config, field) is None:
            raise InvalidParameterError(f"{config.command} needs --{field}")
    if config.command != "simulate":
        check_alpha(config.alpha)
    if config.command in ("calibrate", "test"):
        MethodKind.parse(config.mode.value, config.m)
        if config.command == "test" and (config.mode is Mode.t) != (config.v is not None):
            raise InvalidParameterError("--v is required with --mode t and not accepted with --mode z")
    if config.workers < 1:
        raise InvalidParameterError(f"--workers must be >= 1, got {config.workers}")
    if config.reps is not None and config.reps < 1:
        raise InvalidParameterError(f"--reps must be >= 1, got {config.reps}")
    return config


def _floats(values: np.ndarray) -> typing.List[float]:
    return [float(v) for v in np.asarray(values, dtype=float).ravel()]


def _emit(doc: dict) -> None:
    typer.echo(json.dumps({"schema_version": SCHEMA_VERSION, **doc}, indent=2, allow_nan=False))


def _fail(exc: Exception) -> typing.NoReturn:
    typer.echo(f"error: {exc}", err=True)
    raise typer.Exit(code=exit_code(exc))


@app.callback()
def _configure(
    log_level: str = typer.Option("WARNING", "--log-level", envvar=LOGLEVEL_ENV, help="Logging level for stderr."),
) -> None:
    level = logging.getLevelName(log_level.upper())
    if not isinstance(level, int):
        typer.echo(f"error: unknown log level {log_level!r}", err=True)
        raise typer.Exit(code=2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True)
    logging.getLogger("weightedbh").setLevel(level)


@app.command("calibrate")
def cmd_calibrate(
    sigma: typing.Optional[str] = typer.Option(None, "--sigma", help="Covariance matrix CSV."),
    alpha: float = typer.Option(0.05, "--alpha", help="Target FDR level."),
    mode: Mode = typer.Option(Mode.z, "--mode", help="z for known scale, t for an independent scale estimate."),
    m: typing.Optional[float] = typer.Option(None, "--m", help="Degrees of freedom of the scale estimate (t mode)."),
) -> None:
    """Solve for alpha1 and print the weights, critical constants and residual."""
    try:
        config = check_config(RunConfig("calibrate", alpha=alpha, mode=mode, m=m, sigma=sigma))
        model = build_model(matrix_io.read_matrix(config.sigma))
        method = calibrate(model.weights, config.alpha, config.method)
    except WeightedBHError as exc:
        _fail(exc)
    _emit(
        {
            "method": method.kind.label,
            "alpha": method.alpha,
            "weights": _floats(method.weights),
            "alpha1": method.alpha1,
            "critical_constants": _floats(method.critical_constants),
            "residual": method.residual,
        }
    )


@app.command("test")
def cmd_test(
    sigma: typing.Optional[str] = typer.Option(None, "--sigma", help="Covariance matrix CSV."),
    stats: typing.Optional[str] = typer.Option(None, "--stats", help="CSV of the d observations, one row or column."),
    alpha: float = typer.Option(0.05, "--alpha", help="Target FDR level."),
    mode: Mode = typer.Option(Mode.z, "--mode"),
    m: typing.Optional[float] = typer.Option(None, "--m", help="Degrees of freedom of V (t mode)."),
    v: typing.Optional[float] = typer.Option(None, "--v", help="The scale statistic V ~ tau^2 chi^2_m (t mode)."),
) -> None:
    """Run the weighted BH test and print the rejections and transformed p-values."""
    try:
        config = check_config(RunConfig("test", alpha=alpha, mode=mode, m=m, v=v, sigma=sigma, stats=stats))
        x = matrix_io.read_vector(config.stats)
        cov = matrix_io.read_matrix(config.sigma)
        if config.mode is Mode.t:
            result = evaluate_t(x, config.v, config.m, cov, config.alpha)
        else:
            result = evaluate_z(x, cov, config.alpha)
    except WeightedBHError as exc:
        _fail(exc)
    outcome = result.outcome
    _emit(
        {
            "method": result.method.kind.label,
            "alpha": result.method.alpha,
            "alpha1": result.method.alpha1,
            "rejections": outcome.rejections,
            "rejected": list(outcome.rejected),
            "threshold": outcome.threshold,
            "weights": _floats(result.method.weights),
            "pvalues": _floats(result.pvalues),
            "transformed_pvalues": _floats(result.transformed),
        }
    )


@app.command("select")
def cmd_select(
    design: typing.Optional[str] = typer.Option(
        None, "--design", help="n x d design matrix CSV; include a column of ones for an intercept."
    ),
    response: typing.Optional[str] = typer.Option(None, "--response", help="Response CSV, one row or one column."),
    alpha: float = typer.Option(0.05, "--alpha", help="Target FDR level."),
) -> None:
    """Select regression coefficients with FDR control and print the fit summary."""
    try:
        config = check_config(RunConfig("select", alpha=alpha, design=design, response=response))
        problem = regression_problem(matrix_io.read_matrix(config.design), matrix_io.read_vector(config.response))
        fit, result = evaluate_selection(problem, config.alpha)
        t2 = t_squared(fit)
    except WeightedBHError as exc:
        _fail(exc)
    _emit(
        {
            "method": result.method.kind.label,
            "alpha": result.method.alpha,
            "alpha1": result.method.alpha1,
            "selected": list(result.outcome.rejected),
            "threshold": result.outcome.threshold,
            "beta_hat": _floats(fit.beta_hat),
            "tau2_hat": fit.tau2_hat,
            "dof": fit.dof,
            "t_squared": _floats(t2),
            "weights": _floats(result.method.weights),
            "transformed_pvalues": _floats(result.transformed),
        }
    )


@app.command("simulate")
def cmd_simulate(
    scenario: typing.Optional[str] = typer.Option(None, "--scenario", help="Scenario or grid JSON (schema_version 1)."),
    reps: typing.Optional[int] = typer.Option(None, "--reps", help="Replications per scenario; overrides the file."),
    seed: typing.Optional[int] = typer.Option(None, "--seed", help="Base seed; overrides the file."),
    workers: int = typer.Option(1, "--workers", help="Worker processes."),
    output_format: OutputFormat = typer.Option(OutputFormat.json, "--format", help="Report format."),
    output: typing.Optional[str] = typer.Option(None, "--output", "-o", help="Write the report here, not stdout."),
    check: bool = typer.Option(False, "--check", help="Exit 3 if any report fails FDR validation."),
) -> None:
    """Run Monte Carlo replications and write the FDR report."""
    t0 = time.perf_counter()
    try:
        config = check_config(
            RunConfig(
                "simulate",
                scenario=scenario,
                reps=reps,
                seed=seed,
                workers=workers,
                output_format=output_format,
                output=output,
            )
        )
        scenarios = load_scenarios(config.scenario, replications=config.reps, seed=config.seed)
        reports = [simulate(s, config.workers) for s in scenarios]
    except WeightedBHError as exc:
        _fail(exc)

    text = reports_to_json(reports) if config.output_format is OutputFormat.json else format_tsv(reports)
    if config.output is None:
        typer.echo(text, nl=False)
    else:
        try:
            with open(config.output, "w", encoding="utf-8", newline="\n") as f:
                f.write(text)
        except OSError as exc:
            typer.echo(f"error: cannot write {config.output}: {exc}", err=True)
            raise typer.Exit(code=2)
    typer.echo(format_footer(reports, time.perf_counter() - t0), err=True)

    if check:
        problems = [f"{r.scenario.name}: {p}" for r in reports for p in validate_report(r)]
        for problem in problems:
            typer.echo(f"validation: {problem}", err=True)
        if problems:
            raise typer.Exit(code=3)


def main() -> None:
    app()
