"""The weighted-bh command line, driven through typer's test runner.

Results are read from stdout (or the ``--output`` file) as JSON; error text is
looked for in the combined output since it goes to stderr.
"""

import json

import numpy as np
import pytest
from typer.testing import CliRunner

from weightedbh.cli import Mode, RunConfig, app, check_config
from weightedbh.errors import InvalidParameterError

runner = CliRunner()


def write_csv(path, rows, header=None):
    lines = [] if header is None else [",".join(header)]
    lines += [",".join(repr(float(v)) for v in np.atleast_1d(row)) for row in np.atleast_2d(rows)]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def run_json(args):
    result = runner.invoke(app, args)
    assert result.exit_code == 0, result.output
    return json.loads(result.stdout)


@pytest.fixture
def identity(tmp_path):
    return write_csv(tmp_path / "identity.csv", np.eye(4))


@pytest.fixture
def equicorrelated(tmp_path):
    return write_csv(tmp_path / "sigma.csv", [[1.0, 0.5], [0.5, 1.0]], header=["a", "b"])


# ---- calibrate -------------------------------------------------------------


def test_calibrate_identity(identity):
    doc = run_json(["calibrate", "--sigma", identity, "--alpha", "0.02"])
    assert doc["schema_version"] == 1
    assert doc["method"] == "z"
    assert doc["alpha1"] == pytest.approx(0.005, rel=1e-12)
    assert doc["weights"] == [1.0, 1.0, 1.0, 1.0]
    assert doc["critical_constants"] == pytest.approx([0.005, 0.01, 0.015, 0.02], rel=1e-12)


def test_calibrate_reads_a_header_row(equicorrelated):
    doc = run_json(["calibrate", "--sigma", equicorrelated])
    assert doc["weights"] == pytest.approx([0.75, 0.75], rel=1e-14)
    assert abs(doc["residual"]) <= 1e-10
    assert doc["alpha1"] < 0.025


def test_calibrate_t_mode(equicorrelated):
    doc = run_json(["calibrate", "--sigma", equicorrelated, "--mode", "t", "--m", "12"])
    assert doc["method"] == "t(m=12)"


def test_non_positive_definite_sigma_exits_2_with_the_pivot(tmp_path):
    sigma = write_csv(tmp_path / "bad.csv", [[1.0, 2.0], [2.0, 1.0]])
    result = runner.invoke(app, ["calibrate", "--sigma", sigma])
    assert result.exit_code == 2
    assert "pivot 1" in result.output


@pytest.mark.parametrize(
    "args",
    [
        ["calibrate"],
        ["calibrate", "--sigma", "{sigma}", "--alpha", "1.5"],
        ["calibrate", "--sigma", "{sigma}", "--mode", "t"],
        ["calibrate", "--sigma", "{sigma}", "--m", "5"],
        ["calibrate", "--sigma", "missing.csv"],
    ],
)
def test_bad_arguments_exit_2(identity, args):
    result = runner.invoke(app, [a.format(sigma=identity) for a in args])
    assert result.exit_code == 2
    assert "error:" in result.output


def test_unknown_log_level_exits_2(identity):
    result = runner.invoke(app, ["--log-level", "chatty", "calibrate", "--sigma", identity])
    assert result.exit_code == 2


# ---- test ------------------------------------------------------------------


def test_zero_statistics_reject_nothing(tmp_path, identity):
    stats = write_csv(tmp_path / "x.csv", np.zeros(4))
    doc = run_json(["test", "--sigma", identity, "--stats", stats])
    assert doc["rejections"] == 0
    assert doc["rejected"] == []
    assert doc["threshold"] is None
    assert doc["transformed_pvalues"] == [1.0, 1.0, 1.0, 1.0]


def test_strong_statistics_are_rejected(tmp_path, identity):
    stats = write_csv(tmp_path / "x.csv", np.array([[6.0], [0.2], [-5.0], [0.1]]))
    doc = run_json(["test", "--sigma", identity, "--stats", stats])
    assert doc["rejected"] == [0, 2]


def test_t_mode_needs_v(tmp_path, identity):
    stats = write_csv(tmp_path / "x.csv", np.ones(4))
    result = runner.invoke(app, ["test", "--sigma", identity, "--stats", stats, "--mode", "t", "--m", "10"])
    assert result.exit_code == 2
    assert "--v" in result.output
    doc = run_json(["test", "--sigma", identity, "--stats", stats, "--mode", "t", "--m", "10", "--v", "10"])
    assert doc["method"] == "t(m=10)"


def test_stats_length_must_match_sigma(tmp_path, identity):
    stats = write_csv(tmp_path / "x.csv", np.ones(3))
    result = runner.invoke(app, ["test", "--sigma", identity, "--stats", stats])
    assert result.exit_code == 2


# ---- select ----------------------------------------------------------------


def test_select_finds_the_signal_variables(tmp_path):
    rng = np.random.default_rng(2024)
    x = rng.standard_normal((100, 5))
    y = x @ np.array([0.0, 8.0, 0.0, 0.0, -8.0]) + rng.standard_normal(100)
    design = write_csv(tmp_path / "x.csv", x)
    response = write_csv(tmp_path / "y.csv", y[:, None])
    doc = run_json(["select", "--design", design, "--response", response, "--alpha", "0.0001"])
    assert doc["selected"] == [1, 4]
    assert doc["dof"] == 95
    assert doc["method"] == "t(m=95)"
    assert len(doc["beta_hat"]) == 5


def test_select_rejects_too_few_observations(tmp_path):
    design = write_csv(tmp_path / "x.csv", np.ones((3, 3)))
    response = write_csv(tmp_path / "y.csv", np.ones(3))
    result = runner.invoke(app, ["select", "--design", design, "--response", response])
    assert result.exit_code == 2
    assert "more observations" in result.output


# ---- simulate --------------------------------------------------------------


@pytest.fixture
def scenario_file(tmp_path):
    doc = {
        "schema_version": 1,
        "scenario": {
            "dimension": 4,
            "covariance": {"kind": "equicorrelated", "rho": 0.5},
            "nulls": [0, 1],
            "signal": 2.5,
            "replications": 600,
            "seed": 7,
        },
    }
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_simulate_output_does_not_depend_on_workers(tmp_path, scenario_file):
    outputs = []
    for workers in ("1", "2"):
        out = tmp_path / f"report-{workers}.json"
        result = runner.invoke(app, ["simulate", "--scenario", scenario_file, "--workers", workers, "-o", str(out)])
        assert result.exit_code == 0, result.output
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]
    doc = json.loads(outputs[0])
    assert doc["reports"][0]["fdr"]["direct"]["replications"] == 600


def test_simulate_tsv_with_overrides(tmp_path, scenario_file):
    out = tmp_path / "report.tsv"
    args = ["simulate", "--scenario", scenario_file, "--reps", "50", "--seed", "1", "--format", "tsv", "-o", str(out)]
    result = runner.invoke(app, args)
    assert result.exit_code == 0, result.output
    header, row = out.read_text().splitlines()
    cells = dict(zip(header.split("\t"), row.split("\t")))
    assert cells["reps"] == "50"
    assert cells["seed"] == "1"


def test_simulate_check_passes_on_a_healthy_run(scenario_file):
    result = runner.invoke(app, ["simulate", "--scenario", scenario_file, "--reps", "200", "--check"])
    assert result.exit_code == 0, result.output


def test_simulate_rejects_a_bad_schema(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps({"schema_version": 2, "scenario": {}}))
    result = runner.invoke(app, ["simulate", "--scenario", str(path)])
    assert result.exit_code == 2
    assert "schema_version" in result.output


@pytest.mark.parametrize("flag", [["--workers", "0"], ["--reps", "0"]])
def test_simulate_rejects_non_positive_counts(scenario_file, flag):
    result = runner.invoke(app, ["simulate", "--scenario", scenario_file, *flag])
    assert result.exit_code == 2


# ---- configuration ---------------------------------------------------------


def test_check_config_names_the_missing_path():
    with pytest.raises(InvalidParameterError, match="--stats"):
        check_config(RunConfig("test", alpha=0.05, sigma="s.csv"))


def test_run_config_method():
    assert RunConfig("calibrate", mode=Mode.t, m=4.0).method.label == "t(m=4)"
