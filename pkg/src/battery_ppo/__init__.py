"""Battery energy-storage arbitrage with a recurrent PPO agent and feasible-range supervision."""
from .config import ExperimentConfig, load_config, parse_config_text
from .envsim import BatteryParams, FeasibleRange, feasible_range
from .errors import (ConfigError, ContractViolation, DataError, NumericError, ShapeError,
                     TrainingFailure)
from .harness import dp_oracle, emit_report, evaluate, run_all, run_case
from .policy import NetworkParams
from .ppo import Case, PpoConfig

__version__ = "0.1.0"
