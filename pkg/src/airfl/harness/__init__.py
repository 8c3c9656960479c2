"""Configuration loading, experiment runs and record output."""

from .config import ConfigError, ExperimentConfig, TaskConfig, load_config, parse_config
from .records import HEADER, emit_records, read_records, summarize, write_records
from .runner import bound_report, run_experiment

__all__ = [
    "ConfigError", "ExperimentConfig", "TaskConfig", "load_config", "parse_config", "HEADER",
    "emit_records", "read_records", "summarize", "write_records", "bound_report", "run_experiment",
]
