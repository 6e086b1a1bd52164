"""PPO from scratch: numpy MLPs with manual backprop, GAE, adaptive learning rate."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .networks import (
    ActorCritic,
    RunningNorm,
    elu,
    gaussian_entropy,
    gaussian_log_prob,
    mlp_backward,
    mlp_forward,
)
from .ppo import (
    Adam,
    PpoConfig,
    RolloutBuffer,
    adaptive_lr,
    approx_kl,
    gae_advantages,
    loss_and_grads,
    normalize_advantages,
    ppo_update,
)

__all__ = [
    "ActorCritic",
    "Adam",
    "CheckpointError",
    "PpoConfig",
    "RolloutBuffer",
    "RunningNorm",
    "adaptive_lr",
    "approx_kl",
    "elu",
    "gae_advantages",
    "gaussian_entropy",
    "gaussian_log_prob",
    "load_checkpoint",
    "loss_and_grads",
    "mlp_backward",
    "mlp_forward",
    "normalize_advantages",
    "ppo_update",
    "save_checkpoint",
]
