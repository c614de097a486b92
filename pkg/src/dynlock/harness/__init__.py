"""Configuration, workloads, runs, sweeps, exploration and reporting."""

from .config import ConfigError, RunConfig
from .runner import ExperimentResult, results_from_trace, run

__all__ = ["ConfigError", "ExperimentResult", "RunConfig", "results_from_trace", "run"]
