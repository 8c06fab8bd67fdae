"""Scenario configuration, Monte-Carlo runners, reports and the CLI."""

from .config import ConfigError, ScenarioConfig, default_topology, delay_sweep, load_config, template_attack
from .report import emit_report
from .runner import ExperimentReport, run_appendix_experiment, run_scenario, run_trajectory

__all__ = [
    "ConfigError",
    "ExperimentReport",
    "ScenarioConfig",
    "default_topology",
    "delay_sweep",
    "emit_report",
    "load_config",
    "run_appendix_experiment",
    "run_scenario",
    "run_trajectory",
    "template_attack",
]
