from __future__ import annotations

import copy
from dataclasses import dataclass, fields
from enum import IntEnum

import numpy as np

from .. import geom
from .hands import HandModel


class Phase(IntEnum):
    ACQUISITION = 0
    INTERACTION = 1


@dataclass
class EnvState:
    """Batched simulator state for ``n`` independent environments.

    Hand axis 1 is ordered (facilitating, dominant); object axis 1 is
    (object held by the facilitating hand, object the dominant hand works on).
    ``attached[i, k]`` is the index of the hand welding object ``k`` or -1;
    ``is_child[i, k]`` marks a sub-body posed from object 0 and ``artic``.
    """

    hand_pos: np.ndarray  # (n, 2, 3)
    hand_quat: np.ndarray  # (n, 2, 4)
    joints: np.ndarray  # (n, 2, J)
    joint_vels: np.ndarray  # (n, 2, J)
    joint_targets: np.ndarray  # (n, 2, A) last commanded actuated targets
    grasp_targets: np.ndarray  # (n, 2, A) grasp configuration held for uncontrolled fingers
    obj_pos: np.ndarray  # (n, 2, 3)
    obj_quat: np.ndarray  # (n, 2, 4)
    obj_linvel: np.ndarray  # (n, 2, 3)
    obj_angvel: np.ndarray  # (n, 2, 3)
    attached: np.ndarray  # (n, 2) int
    grasp_pos: np.ndarray  # (n, 2, 3) object pose in its holder's base frame
    grasp_quat: np.ndarray  # (n, 2, 4)
    is_child: np.ndarray  # (n, 2) bool
    supported: np.ndarray  # (n, 2) bool
    artic: np.ndarray  # (n,)
    artic_prev: np.ndarray  # (n,)
    friction: np.ndarray  # (n, 2) domain-randomization passthrough
    step_count: np.ndarray  # (n,) int
    phase: np.ndarray  # (n,) int
    done: np.ndarray  # (n,) bool
    success: np.ndarray  # (n,) bool
    failed: np.ndarray  # (n,) bool
    rngs: list

    @property
    def n(self) -> int:
        return self.hand_pos.shape[0]

    def hand_pose(self, h: int) -> geom.Pose:
        return geom.Pose(self.hand_pos[:, h], self.hand_quat[:, h])

    def obj_pose(self, k: int) -> geom.Pose:
        return geom.Pose(self.obj_pos[:, k], self.obj_quat[:, k])

    def copy(self, share_rngs: bool = False) -> EnvState:
        """Independent copy; with ``share_rngs`` the generator objects are reused, not cloned."""
        kw = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "rngs":
                kw[f.name] = list(v) if share_rngs else copy.deepcopy(v)
            else:
                kw[f.name] = v.copy()
        return EnvState(**kw)

    def select(self, idx) -> EnvState:
        """Sub-batch view as a new state (arrays copied, generators shared)."""
        idx = np.atleast_1d(np.arange(self.n)[idx])
        kw = {f.name: getattr(self, f.name)[idx].copy() for f in fields(self) if f.name != "rngs"}
        kw["rngs"] = [self.rngs[i] for i in idx]
        return EnvState(**kw)

    def assign(self, idx, other: EnvState) -> None:
        idx = np.atleast_1d(np.arange(self.n)[idx])
        for f in fields(self):
            if f.name == "rngs":
                for j, i in enumerate(idx):
                    self.rngs[i] = other.rngs[j]
            else:
                getattr(self, f.name)[idx] = getattr(other, f.name)


def fingertip(state: EnvState, hand: HandModel, h: int, name: str) -> np.ndarray:
    """World position of a named hand point (``palm``, ``index``, ``thumb``)."""
    off = np.asarray(hand.fingertip_offsets[name], dtype=float)
    return state.hand_pos[:, h] + geom.quat_rotate(state.hand_quat[:, h], np.broadcast_to(off, (state.n, 3)))


def object_point(state: EnvState, k: int, offset) -> np.ndarray:
    off = np.broadcast_to(np.asarray(offset, dtype=float), (state.n, 3))
    return state.obj_pos[:, k] + geom.quat_rotate(state.obj_quat[:, k], off)


# flat per-environment record used for replay and debugging
_SNAPSHOT_FIELDS = (
    "step_count", "phase", "done", "success", "failed", "artic", "artic_prev",
    "hand_pos", "hand_quat", "joints", "joint_vels", "joint_targets", "grasp_targets",
    "obj_pos", "obj_quat", "obj_linvel", "obj_angvel", "attached", "grasp_pos", "grasp_quat",
    "is_child", "supported", "friction",
)


def snapshot_layout(n_joints: int, n_act: int) -> list[tuple[str, int, int]]:
    """``(field, offset, length)`` of each block in a snapshot row."""
    sizes = {
        "step_count": 1, "phase": 1, "done": 1, "success": 1, "failed": 1, "artic": 1, "artic_prev": 1,
        "hand_pos": 6, "hand_quat": 8, "joints": 2 * n_joints, "joint_vels": 2 * n_joints,
        "joint_targets": 2 * n_act, "grasp_targets": 2 * n_act,
        "obj_pos": 6, "obj_quat": 8, "obj_linvel": 6, "obj_angvel": 6, "attached": 2,
        "grasp_pos": 6, "grasp_quat": 8, "is_child": 2, "supported": 2, "friction": 2,
    }
    out, off = [], 0
    for name in _SNAPSHOT_FIELDS:
        out.append((name, off, sizes[name]))
        off += sizes[name]
    return out


def snapshot(state: EnvState) -> np.ndarray:
    """One float64 row per environment; generator state is not included."""
    n = state.n
    return np.concatenate(
        [np.asarray(getattr(state, name), dtype=float).reshape(n, -1) for name in _SNAPSHOT_FIELDS], axis=1
    )


def restore(rows: np.ndarray, n_joints: int, n_act: int, rngs: list | None = None) -> EnvState:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    n = rows.shape[0]
    shapes = {
        "hand_pos": (2, 3), "hand_quat": (2, 4), "joints": (2, n_joints), "joint_vels": (2, n_joints),
        "joint_targets": (2, n_act), "grasp_targets": (2, n_act), "obj_pos": (2, 3), "obj_quat": (2, 4),
        "obj_linvel": (2, 3), "obj_angvel": (2, 3), "attached": (2,), "grasp_pos": (2, 3),
        "grasp_quat": (2, 4), "is_child": (2,), "supported": (2,), "friction": (2,),
    }
    ints = {"step_count", "phase", "attached"}
    bools = {"done", "success", "failed", "is_child", "supported"}
    kw = {}
    for name, off, length in snapshot_layout(n_joints, n_act):
        block = rows[:, off : off + length].reshape((n,) + shapes.get(name, ()))
        if name in ints:
            block = block.astype(np.int64)
        elif name in bools:
            block = block.astype(bool)
        kw[name] = block
    kw["rngs"] = rngs if rngs is not None else [np.random.default_rng(0) for _ in range(n)]
    return EnvState(**kw)
