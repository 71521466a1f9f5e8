"""Classical Bell-CHSH apparatus with memory-bearing detectors."""

from .errors import ConfigError, UndefinedEstimateError
from .experimenter import SettingPair, SettingSchedule, SwitchPolicy, generate_schedule
from .harness import RunConfig, TallyMatrix, chsh, run_experiment
from .table import LookupTable, advance_index, build_table

__all__ = [
    "ConfigError",
    "LookupTable",
    "RunConfig",
    "SettingPair",
    "SettingSchedule",
    "SwitchPolicy",
    "TallyMatrix",
    "UndefinedEstimateError",
    "advance_index",
    "build_table",
    "chsh",
    "generate_schedule",
    "run_experiment",
]
