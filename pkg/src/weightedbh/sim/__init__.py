"""Monte Carlo validation of the weighted BH tests.

:mod:`.scenario` describes what to simulate, :mod:`.engine` runs replications
and reduces them to a :class:`~.engine.SimulationReport`, :mod:`.oracle` checks
the conditional law the proofs rely on, and :mod:`.report` writes JSON and TSV.
"""

from .engine import (
    FdrEstimate,
    ReplicationResult,
    SimulationReport,
    estimate_fdr_conditional,
    estimate_fdr_direct,
    estimate_fdr_leave_one_out,
    run_replication,
    simulate,
    validate_report,
)
from .oracle import lemma2_conditional_check
from .scenario import CovarianceSpec, GridSpec, Scenario, generate_scenario_grid, load_scenarios, make_scenario

__all__ = [
    "CovarianceSpec",
    "FdrEstimate",
    "GridSpec",
    "ReplicationResult",
    "Scenario",
    "SimulationReport",
    "estimate_fdr_conditional",
    "estimate_fdr_direct",
    "estimate_fdr_leave_one_out",
    "generate_scenario_grid",
    "lemma2_conditional_check",
    "load_scenarios",
    "make_scenario",
    "run_replication",
    "simulate",
    "validate_report",
]
