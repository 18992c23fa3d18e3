"""Scenarios for the Monte Carlo checks: what to draw, how to test it, how often.

A :class:`Scenario` is a plain record that pickles cheaply and serialises to
JSON, so the same value can be shipped to worker processes and written into a
report. Covariances are described rather than stored where they can be
regenerated: an equicorrelated matrix from ``rho``, a random correlation
matrix from its seed, a regression design from ``(n, column_rho, seed)``.

Scenario files are JSON with ``"schema_version": 1`` and either a
``"scenario"`` object or a ``"grid"`` object; :func:`load_scenarios` reads
both. Indices in files are 0-based.
"""

import hashlib
import json
import logging
import math
import typing

import numpy as np
import numpy.typing as npt
from scipy import stats

from ..corr import build_model, equicorrelated_matrix, equicorrelated_weight, mean_spec, sample_mvn
from ..errors import InvalidInputError, InvalidParameterError
from ..matrix_io import read_json
from ..procedure import MethodKind, check_alpha

__all__ = [
    "DEFAULT_RHOS",
    "DEFAULT_SIGNAL",
    "SCHEMA_VERSION",
    "CovarianceSpec",
    "GridSpec",
    "Scenario",
    "covariance_matrix",
    "generate_scenario_grid",
    "grid_from_dict",
    "load_scenarios",
    "make_scenario",
    "random_correlation",
    "regression_design",
    "scenario_digest",
    "scenario_from_dict",
    "scenario_mean",
    "scenario_to_dict",
    "scenarios_from_document",
]

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_RHOS = (-0.1, 0.0, 0.3, 0.7, 0.9)
DEFAULT_SIGNAL = 3.0
COVARIANCE_KINDS = ("explicit", "equicorrelated", "random", "regression")


class CovarianceSpec(typing.NamedTuple):
    """How to obtain the covariance of a scenario.

    Only the fields of the chosen ``kind`` are read: ``matrix`` for explicit,
    ``rho`` for equicorrelated, ``seed`` and ``condition`` for random, and
    ``n``, ``rho`` (between design columns) and ``seed`` for regression.
    """

    kind: str
    matrix: typing.Optional[typing.Tuple[typing.Tuple[float, ...], ...]] = None
    rho: typing.Optional[float] = None
    seed: typing.Optional[int] = None
    condition: float = 100.0
    """Ratio of the largest to smallest eigenvalue before standardisation (random kind)."""

    n: typing.Optional[int] = None

    @property
    def label(self) -> str:
        """Short description for the ``covariance`` column of a TSV report."""
        if self.kind == "equicorrelated":
            return f"rho={self.rho!r}"
        if self.kind == "random":
            return f"random(seed={self.seed},cond={self.condition!r})"
        if self.kind == "regression":
            return f"regression(n={self.n},rho={self.rho!r},seed={self.seed})"
        return "explicit"


class Scenario(typing.NamedTuple):
    name: str
    dimension: int
    covariance: CovarianceSpec
    nulls: typing.Tuple[int, ...]
    """True null hypotheses, 0-based and ascending."""

    signal: float
    """Standardised mean of every false null: ``mu_i = signal * sqrt(sigma_ii)``."""

    method: MethodKind
    alpha: float
    replications: int
    seed: int

    @property
    def alternatives(self) -> typing.Tuple[int, ...]:
        null_set = set(self.nulls)
        return tuple(i for i in range(self.dimension) if i not in null_set)


class GridSpec(typing.NamedTuple):
    """A product of scenario settings; see :func:`generate_scenario_grid`."""

    dimensions: typing.Tuple[int, ...] = (10,)
    """rho = -0.1 in the default ``rhos`` needs d <= 10."""

    rhos: typing.Tuple[float, ...] = DEFAULT_RHOS
    random_seeds: typing.Tuple[int, ...] = ()
    signals: typing.Tuple[float, ...] = (DEFAULT_SIGNAL,)
    null_fractions: typing.Tuple[float, ...] = (1.0, 0.5)
    methods: typing.Tuple[MethodKind, ...] = (MethodKind.z(),)
    regression_n: typing.Optional[int] = None
    """When set, the grid is of regression scenarios with ``n`` observations and ``rhos`` between columns."""

    alpha: float = 0.05
    replications: int = 10_000
    seed: int = 0


# ---- covariance generation -------------------------------------------------


def random_correlation(d: int, seed: int, condition: float = 100.0) -> np.ndarray:
    """A random correlation matrix: Haar-random eigenbasis, log-uniform eigenvalues.

    Eigenvalues are drawn log-uniformly from ``[1, condition]``, the matrix
    ``Q diag(e) Q'`` is formed and then rescaled to unit diagonal.
    """
    d = _check_dimension(d)
    if not (math.isfinite(condition) and condition >= 1.0):
        raise InvalidParameterError(f"condition must be a finite number >= 1, got {condition!r}")
    rng = np.random.default_rng(seed)
    if d == 1:
        return np.ones((1, 1))
    basis = stats.ortho_group.rvs(d, random_state=rng)
    eigenvalues = np.exp(rng.uniform(0.0, math.log(condition), size=d))
    cov = (basis * eigenvalues) @ basis.T
    scale = np.sqrt(np.diag(cov))
    corr = cov / np.outer(scale, scale)
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return corr


def regression_design(n: int, d: int, column_rho: float, seed: int) -> np.ndarray:
    """``n x d`` design whose rows are independent draws with equicorrelated columns."""
    d = _check_dimension(d)
    n = _check_int("regression n", n, d + 1)
    rng = np.random.default_rng(seed)
    if d == 1:
        return rng.standard_normal((n, 1))
    model = build_model(equicorrelated_matrix(d, column_rho))
    return sample_mvn(model, mean_spec(model, np.zeros(d)), rng, size=n)


def covariance_matrix(spec: CovarianceSpec, d: int) -> np.ndarray:
    """The ``d x d`` covariance a non-regression spec describes."""
    if spec.kind == "explicit":
        matrix = np.asarray(spec.matrix, dtype=float)
        if matrix.shape != (d, d):
            raise InvalidInputError(f"explicit covariance must be {d} x {d}, got shape {matrix.shape}")
        return matrix
    if spec.kind == "equicorrelated":
        if d == 1:
            return np.ones((1, 1))
        return equicorrelated_matrix(d, spec.rho)
    if spec.kind == "random":
        return random_correlation(d, spec.seed, spec.condition)
    raise InvalidParameterError(f"{spec.kind!r} covariance has no fixed matrix")


# ---- validation ------------------------------------------------------------


def _check_int(name: str, value: typing.Any, minimum: int) -> int:
    integral = isinstance(value, (int, np.integer)) or (isinstance(value, float) and value.is_integer())
    if isinstance(value, bool) or not integral or value < minimum:
        raise InvalidParameterError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def _check_dimension(d: int) -> int:
    return _check_int("dimension", d, 1)


def _check_covariance(spec: CovarianceSpec, d: int) -> CovarianceSpec:
    if spec.kind not in COVARIANCE_KINDS:
        raise InvalidParameterError(f"covariance kind must be one of {COVARIANCE_KINDS}, got {spec.kind!r}")
    if spec.kind == "explicit":
        if spec.matrix is None:
            raise InvalidParameterError("explicit covariance needs a matrix")
        matrix = covariance_matrix(spec, d)
        return spec._replace(matrix=tuple(tuple(float(v) for v in row) for row in matrix))
    if spec.kind == "equicorrelated":
        if spec.rho is None:
            raise InvalidParameterError("equicorrelated covariance needs rho")
        if d >= 2:
            equicorrelated_weight(d, spec.rho)
        return spec._replace(rho=float(spec.rho))
    seed = _check_int(f"{spec.kind} covariance seed", spec.seed, 0)
    if spec.kind == "random":
        condition = float(spec.condition)
        if not (math.isfinite(condition) and condition >= 1.0):
            raise InvalidParameterError(f"condition must be a finite number >= 1, got {spec.condition!r}")
        return spec._replace(seed=seed, condition=condition)
    n = _check_int("regression n", spec.n, d + 1)
    rho = 0.0 if spec.rho is None else float(spec.rho)
    if d >= 2:
        equicorrelated_weight(d, rho)
    return spec._replace(seed=seed, n=n, rho=rho)


def make_scenario(
    dimension: int,
    covariance: CovarianceSpec,
    *,
    nulls: typing.Optional[typing.Iterable[int]] = None,
    signal: float = DEFAULT_SIGNAL,
    method: typing.Optional[MethodKind] = None,
    alpha: float = 0.05,
    replications: int = 10_000,
    seed: int = 0,
    name: typing.Optional[str] = None,
) -> Scenario:
    """Validated :class:`Scenario`.

    ``nulls`` defaults to every index (the global null). ``method`` defaults to
    the z test, except for regression scenarios, which always run the t test
    with ``m = n - d``; a t method with ``m is None`` is completed the same way.

    :raises InvalidParameterError: for a bad dimension, level, replication
        count, seed, method or covariance parameter (including ``rho`` outside
        ``(-1/(d-1), 1)``).
    :raises InvalidInputError: for null indices out of range.
    """
    d = _check_dimension(dimension)
    covariance = _check_covariance(covariance, d)
    alpha = check_alpha(alpha)
    replications = _check_int("replication count", replications, 1)
    seed = _check_int("seed", seed, 0)
    signal = float(signal)
    if not math.isfinite(signal):
        raise InvalidParameterError(f"signal must be finite, got {signal!r}")

    null_set = tuple(range(d)) if nulls is None else tuple(sorted({int(i) for i in nulls}))
    if any(not 0 <= i < d for i in null_set):
        raise InvalidInputError(f"null indices must lie in [0, {d}), got {null_set}")

    if covariance.kind == "regression":
        m = covariance.n - d
        if method is not None and (method.kind != "t" or (method.m is not None and method.m != m)):
            raise InvalidParameterError(f"regression scenarios run the t test with m = n - d = {m}, got {method}")
        method = MethodKind.t(m)
    elif method is None:
        method = MethodKind.z()
    elif method.kind == "t" and method.m is None:
        raise InvalidParameterError("the t method needs m outside regression scenarios")
    else:
        method = MethodKind.parse(method.kind, method.m)

    if name is None:
        name = f"{covariance.label}/d={d}/nulls={len(null_set)}/{method.label}"
    return Scenario(
        name=str(name),
        dimension=d,
        covariance=covariance,
        nulls=null_set,
        signal=signal,
        method=method,
        alpha=alpha,
        replications=int(replications),
        seed=int(seed),
    )


# ---- grids -----------------------------------------------------------------


def _null_count(d: int, fraction: float) -> int:
    if not (0.0 <= fraction <= 1.0):
        raise InvalidParameterError(f"null fraction must lie in [0, 1], got {fraction!r}")
    return int(round(fraction * d))


def _derived_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def generate_scenario_grid(spec: GridSpec) -> typing.List[Scenario]:
    """Every combination of dimension, covariance, signal, null fraction and method.

    Covariances are equicorrelated for each of ``rhos`` (or regression designs
    with that column correlation when ``regression_n`` is set) plus one random
    correlation matrix per entry of ``random_seeds``. The first ``round(f * d)``
    indices are the true nulls. Each scenario gets its own seed, derived from
    ``spec.seed`` and its position in the grid.

    :raises InvalidParameterError: if some ``rho`` is infeasible for some ``d``.
    """
    covariances: typing.List[CovarianceSpec] = []
    if spec.regression_n is not None:
        covariances += [CovarianceSpec("regression", rho=float(r), n=spec.regression_n) for r in spec.rhos]
    else:
        covariances += [CovarianceSpec("equicorrelated", rho=float(r)) for r in spec.rhos]
        covariances += [CovarianceSpec("random", seed=int(s)) for s in spec.random_seeds]
    methods = spec.methods if spec.regression_n is None else (MethodKind("t"),)

    scenarios: typing.List[Scenario] = []
    for d in spec.dimensions:
        for cov in covariances:
            for signal in spec.signals:
                for fraction in spec.null_fractions:
                    for method in methods:
                        index = len(scenarios)
                        design = cov._replace(seed=_derived_seed(spec.seed, index)) if cov.kind == "regression" else cov
                        scenarios.append(
                            make_scenario(
                                d,
                                design,
                                nulls=range(_null_count(d, fraction)),
                                signal=signal,
                                method=method,
                                alpha=spec.alpha,
                                replications=spec.replications,
                                seed=_derived_seed(spec.seed, index),
                            )
                        )
    logger.info("generated %d scenarios", len(scenarios))
    return scenarios


# ---- JSON ------------------------------------------------------------------


def _method_to_dict(method: MethodKind) -> dict:
    return {"kind": method.kind} if method.m is None else {"kind": method.kind, "m": method.m}


def _method_from_dict(obj: typing.Any) -> MethodKind:
    if isinstance(obj, str):
        obj = {"kind": obj}
    if not isinstance(obj, dict) or "kind" not in obj:
        raise InvalidInputError(f"method must be 'z', 't' or an object with a 'kind', got {obj!r}")
    kind = str(obj["kind"]).lower()
    if kind == "t" and obj.get("m") is None:
        return MethodKind("t")
    return MethodKind.parse(kind, obj.get("m"))


def _covariance_to_dict(spec: CovarianceSpec) -> dict:
    fields = {
        "explicit": ("matrix",),
        "equicorrelated": ("rho",),
        "random": ("seed", "condition"),
        "regression": ("n", "rho", "seed"),
    }[spec.kind]
    out = {"kind": spec.kind}
    for field in fields:
        value = getattr(spec, field)
        out[field] = [list(row) for row in value] if field == "matrix" else value
    return out


def _covariance_from_dict(obj: typing.Any) -> CovarianceSpec:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise InvalidInputError(f"covariance must be an object with a 'kind', got {obj!r}")
    unknown = set(obj) - set(CovarianceSpec._fields)
    if unknown:
        raise InvalidInputError(f"unknown covariance fields: {sorted(unknown)}")
    values = dict(obj)
    if values.get("matrix") is not None:
        values["matrix"] = tuple(tuple(float(v) for v in row) for row in values["matrix"])
    return CovarianceSpec(**values)


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "name": scenario.name,
        "dimension": scenario.dimension,
        "covariance": _covariance_to_dict(scenario.covariance),
        "nulls": list(scenario.nulls),
        "signal": scenario.signal,
        "method": _method_to_dict(scenario.method),
        "alpha": scenario.alpha,
        "replications": scenario.replications,
        "seed": scenario.seed,
    }


def scenario_from_dict(
    obj: dict,
    *,
    replications: typing.Optional[int] = None,
    seed: typing.Optional[int] = None,
) -> Scenario:
    """Scenario from its JSON object; ``replications`` and ``seed`` override the file."""
    if not isinstance(obj, dict):
        raise InvalidInputError(f"a scenario must be a JSON object, got {type(obj).__name__}")
    try:
        dimension = obj["dimension"]
        covariance = _covariance_from_dict(obj["covariance"])
    except KeyError as exc:
        raise InvalidInputError(f"scenario is missing {exc.args[0]!r}") from exc
    return make_scenario(
        dimension,
        covariance,
        nulls=obj.get("nulls"),
        signal=obj.get("signal", DEFAULT_SIGNAL),
        method=_method_from_dict(obj["method"]) if "method" in obj else None,
        alpha=obj.get("alpha", 0.05),
        replications=replications if replications is not None else obj.get("replications", 10_000),
        seed=seed if seed is not None else obj.get("seed", 0),
        name=obj.get("name"),
    )


def grid_from_dict(
    obj: dict,
    *,
    replications: typing.Optional[int] = None,
    seed: typing.Optional[int] = None,
) -> GridSpec:
    if not isinstance(obj, dict):
        raise InvalidInputError(f"a grid must be a JSON object, got {type(obj).__name__}")
    unknown = set(obj) - set(GridSpec._fields)
    if unknown:
        raise InvalidInputError(f"unknown grid fields: {sorted(unknown)}")
    values = {
        key: tuple(value) if isinstance(value, list) else value
        for key, value in obj.items()
        if key not in ("methods",)
    }
    if "methods" in obj:
        values["methods"] = tuple(_method_from_dict(m) for m in obj["methods"])
    if replications is not None:
        values["replications"] = replications
    if seed is not None:
        values["seed"] = seed
    return GridSpec(**values)


def scenarios_from_document(
    doc: typing.Any,
    *,
    replications: typing.Optional[int] = None,
    seed: typing.Optional[int] = None,
) -> typing.List[Scenario]:
    """Scenarios described by a parsed scenario file."""
    if not isinstance(doc, dict):
        raise InvalidInputError("a scenario file must hold a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InvalidInputError(f"unsupported scenario schema_version {version!r}, expected {SCHEMA_VERSION}")
    if ("scenario" in doc) == ("grid" in doc):
        raise InvalidInputError("a scenario file needs exactly one of 'scenario' or 'grid'")
    if "scenario" in doc:
        return [scenario_from_dict(doc["scenario"], replications=replications, seed=seed)]
    return generate_scenario_grid(grid_from_dict(doc["grid"], replications=replications, seed=seed))


def load_scenarios(
    path: str,
    *,
    replications: typing.Optional[int] = None,
    seed: typing.Optional[int] = None,
) -> typing.List[Scenario]:
    return scenarios_from_document(read_json(path), replications=replications, seed=seed)


def scenario_digest(scenario: Scenario) -> str:
    """SHA-256 of the scenario's canonical JSON; equal digests mean equal scenarios."""
    canonical = json.dumps(scenario_to_dict(scenario), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def scenario_mean(scenario: Scenario, scale: npt.ArrayLike) -> np.ndarray:
    """``mu`` with ``signal * scale_i`` on the alternatives and zero on the nulls."""
    mu = np.zeros(scenario.dimension)
    alternatives = list(scenario.alternatives)
    mu[alternatives] = scenario.signal * np.asarray(scale, dtype=float)[alternatives]
    return mu
