"""Self-contained PPO with a numpy actor-critic."""

from .algorithm import (
    Adam,
    ProgressRecord,
    RolloutBuffer,
    TrainConfig,
    TrainResult,
    UpdateStats,
    clip_grad_norm,
    clipped_surrogate,
    compute_gae,
    normalize_advantages,
    ppo_update,
    train_loop,
)
from .policy import (
    PolicyParameters,
    gaussian_log_prob,
    init_params,
    policy_forward,
    ppo_loss_and_grad,
    sample_action,
)

__all__ = [
    "Adam", "ProgressRecord", "RolloutBuffer", "TrainConfig", "TrainResult", "UpdateStats",
    "clip_grad_norm", "clipped_surrogate", "compute_gae", "normalize_advantages", "ppo_update",
    "train_loop", "PolicyParameters", "gaussian_log_prob", "init_params", "policy_forward",
    "ppo_loss_and_grad", "sample_action",
]
