from .env import (
    MuState,
    ScenarioConfig,
    StepLedger,
    apply_actions,
    end_step,
    initial_states,
    realized_profit,
    step_environment,
)
from .metrics import SimReport, collect_metrics
from .policies import Artifacts, SimRun, baseline_greedy, baseline_static, run_policy

__all__ = [
    "Artifacts",
    "MuState",
    "ScenarioConfig",
    "SimReport",
    "SimRun",
    "StepLedger",
    "apply_actions",
    "baseline_greedy",
    "baseline_static",
    "collect_metrics",
    "end_step",
    "initial_states",
    "realized_profit",
    "run_policy",
    "step_environment",
]
