"""Interaction-phase task rewards, grasp rewards and the action penalty."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import geom

if TYPE_CHECKING:
    from .envsim.hands import HandModel
    from .envsim.state import EnvState
    from .envsim.tasks import TaskSpec

Z_WORLD = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class RewardCoeffs:
    # simulated-task weights: hand distance, progress, action penalty, success
    hand: float = 0.5
    progress: float = 1.0
    action: float = 0.01
    success: float = 10.0
    success_bonus: float = 25.0
    # real-world task weights on the task terms (the last is the hand-distance term of twist-lid)
    beta: tuple[float, float, float, float] = (1.0, 1.0, 1.0, -1.0)
    grasp_alpha: float = 0.1
    grasp_beta: float = 10.0

    def __post_init__(self):
        vals = (self.hand, self.progress, self.action, self.success, self.success_bonus,
                *self.beta, self.grasp_alpha, self.grasp_beta)
        if not np.all(np.isfinite(vals)):
            raise ValueError("reward coefficients must be finite")
        if self.success_bonus <= 0:
            raise ValueError("success bonus must be positive")


def action_penalty(action) -> np.ndarray:
    a = np.asarray(action, dtype=float)
    return -np.sum(a * a, axis=-1)


def pinch_term(d_index, d_thumb) -> np.ndarray:
    return (1.0 - (d_index + d_thumb)) ** 3


def _norm(v) -> np.ndarray:
    return np.linalg.norm(v, axis=-1)


def task_components(task: TaskSpec, hand: HandModel, state: EnvState) -> dict[str, np.ndarray]:
    """Unweighted per-environment reward terms of the interaction phase."""
    from .envsim.hands import DOM, FAC
    from .envsim.state import fingertip, object_point
    from .envsim.tasks import TaskId

    t = task.task
    pts = task.points
    palm = fingertip(state, hand, DOM, "palm")
    index = fingertip(state, hand, DOM, "index")
    thumb = fingertip(state, hand, DOM, "thumb")
    obj_f, obj_d = state.obj_pos[:, 0], state.obj_pos[:, 1]

    if t in (TaskId.BLOCK_IN_CUP, TaskId.RW_BLOCK_IN_CUP):
        mouth = object_point(state, *pts["cup_mouth"])
        return {"hand": np.exp(-_norm(palm - mouth)), "progress": -_norm(obj_f - obj_d)}
    if t is TaskId.STACK:
        mouth = object_point(state, *pts["cup_mouth"])
        return {"hand": np.exp(-_norm(palm - mouth)), "progress": -_norm(obj_d - obj_f)}
    if t is TaskId.BOTTLE_CAP:
        top = object_point(state, *pts["bottle_top"])
        return {
            "hand": pinch_term(_norm(index - obj_d), _norm(thumb - obj_d)),
            "progress": _norm(obj_d - top),
        }
    if t is TaskId.SWITCH:
        return {
            "hand": pinch_term(_norm(index - obj_d), _norm(thumb - obj_d)),
            "progress": 2.0 * state.artic,
        }
    if t is TaskId.RW_POUR:
        mouth = object_point(state, *pts["cup_mouth"])
        rim_f = object_point(state, *pts["cup_rim_f"])
        rim_d = object_point(state, *pts["cup_rim_d"])
        return {
            "hand": np.exp(-_norm(palm - mouth)),
            "progress": -_norm(rim_d - rim_f),
            "cup_orient": geom.quat_axis(state.obj_quat[:, 0], 2) @ Z_WORLD,
        }
    if t is TaskId.RW_TWIST_LID:
        from .envsim.sim import rim_distance

        palm_f = fingertip(state, hand, FAC, "palm")
        return {
            "orient": geom.quat_axis(state.obj_quat[:, 0], 2) @ Z_WORLD,
            "twist": state.artic - state.artic_prev,
            "finger_dist": pinch_term(rim_distance(state, task, index), rim_distance(state, task, thumb)),
            "hand_dist_penalty": -np.minimum(_norm(palm_f - palm) - 0.1, 0.0),
        }
    raise ValueError(f"no reward defined for task {t!r}")


def interaction_reward(
    task: TaskSpec,
    hand: HandModel,
    state: EnvState,
    action,
    coeffs: RewardCoeffs | None = None,
    success=None,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Weighted reward per environment and the weighted components that make it up.

    ``success`` defaults to ``state.success`` (set by the simulator step).
    """
    from .envsim.tasks import TaskId

    c = task.reward if coeffs is None else coeffs
    raw = task_components(task, hand, state)
    succ = np.asarray(state.success if success is None else success, dtype=float)
    if task.is_real_world:
        order = {
            TaskId.RW_BLOCK_IN_CUP: ("hand", "progress"),
            TaskId.RW_POUR: ("hand", "progress", "cup_orient"),
            TaskId.RW_TWIST_LID: ("orient", "twist", "finger_dist", "hand_dist_penalty"),
        }[task.task]
        parts = {k: c.beta[i] * raw[k] for i, k in enumerate(order)}
    else:
        parts = {"hand": c.hand * raw["hand"], "progress": c.progress * raw["progress"]}
    parts["action_penalty"] = c.action * action_penalty(action)
    parts["success"] = c.success * c.success_bonus * succ
    total = sum(parts.values())
    return total, parts


def grasp_reward(x_rel, x_initial, u_hand, u_obj, alpha: float, beta: float) -> np.ndarray:
    """Reward for keeping the object's pose fixed relative to the hand during a scripted lift.

    ``x_rel``/``x_initial`` are the current and initial hand-to-object positions;
    ``u_hand``/``u_obj`` are unit direction vectors that coincide when the grasp starts.
    """
    drift = _norm(np.asarray(x_rel, dtype=float) - np.asarray(x_initial, dtype=float))
    r_pos = (alpha - drift) * beta
    r_rot = np.sum(np.asarray(u_obj, dtype=float) * np.asarray(u_hand, dtype=float), axis=-1)
    return r_pos + r_rot
