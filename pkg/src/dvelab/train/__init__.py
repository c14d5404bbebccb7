from .rollout import RolloutBatch, collect_rollouts, compute_returns_advantages
from .update import (
    NonFiniteLossError,
    UpdateStats,
    a2c_update,
    kappa_estimate,
    kl_old_new,
    ppo_update,
    sample_variance_psi2,
)
from .evaluate import evaluate, prediction_error, run_episode
from .loop import EVAL_COLUMNS, METRIC_COLUMNS, Trainer

__all__ = [
    "RolloutBatch", "collect_rollouts", "compute_returns_advantages",
    "NonFiniteLossError", "UpdateStats", "a2c_update", "kappa_estimate",
    "kl_old_new", "ppo_update", "sample_variance_psi2",
    "evaluate", "prediction_error", "run_episode",
    "EVAL_COLUMNS", "METRIC_COLUMNS", "Trainer",
]
