from .config import ConfigError, ExperimentConfig, build_config, default_config
from .experiments import ESTIMATOR_SOURCES, RunRecord, aggregate, run_experiment
from .output import CSV_HEADER, emit_csv, emit_svg, read_csv

__all__ = [
    "CSV_HEADER",
    "ConfigError",
    "ESTIMATOR_SOURCES",
    "ExperimentConfig",
    "RunRecord",
    "aggregate",
    "build_config",
    "default_config",
    "emit_csv",
    "emit_svg",
    "read_csv",
    "run_experiment",
]
