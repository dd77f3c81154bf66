from .config import ConfigError, RunConfig, load_config, parse_config
from .experiment import run_toy_experiment, train_or_load
from .oracle import OracleReport, run_oracle_suite
from .records import RunRecord, read_csv, write_csv

__all__ = [
    "ConfigError",
    "OracleReport",
    "RunConfig",
    "RunRecord",
    "load_config",
    "parse_config",
    "read_csv",
    "run_oracle_suite",
    "run_toy_experiment",
    "train_or_load",
    "write_csv",
]
