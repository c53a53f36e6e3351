from .config import (
    SCENARIOS,
    AnalysisConfig,
    ConfigError,
    ExperimentConfig,
    apply_values,
    dump_config,
    load_config,
    parse_config,
    preset,
)
from .runner import RunReport, run_scenario, sweep, sweep_table

__all__ = [
    "SCENARIOS",
    "AnalysisConfig",
    "ConfigError",
    "ExperimentConfig",
    "RunReport",
    "apply_values",
    "dump_config",
    "load_config",
    "parse_config",
    "preset",
    "run_scenario",
    "sweep",
    "sweep_table",
]
