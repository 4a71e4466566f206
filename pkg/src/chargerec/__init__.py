"""EV charging-station recommendation: a seeded city simulator, DQN-family recommenders, and rule-based baselines."""

from .agents import BASELINE_KINDS, LEARNED_KINDS, POLICY_KINDS, AgentConfig, make_policy
from .episode import run_episode
from .errors import ChargeRecError, CheckpointError, ConfigError, NumericAbort
from .metrics import aggregate, compare_table, estimate_global_savings
from .scenario import Scenario, bundled
from .training import TrainSchedule, run_training

__version__ = "0.1.0"

__all__ = [
    "AgentConfig", "BASELINE_KINDS", "ChargeRecError", "CheckpointError", "ConfigError", "LEARNED_KINDS",
    "NumericAbort", "POLICY_KINDS", "Scenario", "TrainSchedule", "aggregate", "bundled", "compare_table",
    "estimate_global_savings", "make_policy", "run_episode", "run_training",
]
