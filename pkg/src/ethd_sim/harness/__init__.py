"""Experiment runner: scenarios, the virtual-clock simulation, suites and the CLI."""

from .realtime import Endpoints, decision_log, serve_headset, serve_robot
from .report import colocation_csv, colocation_summary, summary_csv, summary_table, trials_csv
from .runner import (
    ColocationReport,
    SafetyAbort,
    Simulation,
    TrialBatchReport,
    TrialError,
    TrialRecord,
    TrialTimeout,
    run_batch,
    run_colocation_eval,
    run_trial,
    summarize,
    trial_seeds,
)
from .scenario import ConfigError, Scenario, load_scenario, scenario_from_dict, scenario_to_dict
from .suites import protocol_soak, safety_suite

__all__ = [name for name in dir() if not name.startswith("_")]
