"""Experiment configuration, runs, CSV output and the command line."""
from .cne import solve_cne
from .config import ConfigError, ExperimentConfig
from .experiment import Experiment, TrajectoryRecord, emit_csv, read_csv, run_experiment

__all__ = ["ConfigError", "Experiment", "ExperimentConfig", "TrajectoryRecord", "emit_csv",
           "read_csv", "run_experiment", "solve_cne"]
