"""Desk-scale bimanual simulator: hands, tasks, batched state and stepping."""

from .hands import DOM, FAC, HandModel, bare_hand, get_hand
from .sim import (
    StepResult,
    check_reset,
    check_success,
    make_rngs,
    reset_envs,
    reset_sample,
    step,
    update_articulation,
)
from .state import EnvState, Phase
from .tasks import ConfigError, TaskId, TaskSpec, make_task, task_from_tree

__all__ = [
    "DOM",
    "FAC",
    "ConfigError",
    "EnvState",
    "HandModel",
    "Phase",
    "StepResult",
    "TaskId",
    "TaskSpec",
    "bare_hand",
    "check_reset",
    "check_success",
    "get_hand",
    "make_rngs",
    "make_task",
    "reset_envs",
    "reset_sample",
    "step",
    "task_from_tree",
    "update_articulation",
]
