"""Observation and action spaces of the four policy variants.

Variants differ on two axes: whether the policy sees and commands both hands
(symmetric) or only the dominant hand plus the facilitating base
(asymmetric), and whether base poses are absolute world coordinates or
expressed relative to P_f, the frame of the object held by the facilitating
hand.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import geom
from .controller import ControllerConfig, eq1_targets
from .envsim.hands import DOM, FAC, HandModel
from .envsim.state import EnvState
from .envsim.tasks import ConfigError, NoiseSpec
from .geom import Pose

POSE_DIM = 7
BASE_DELTA_DIM = 6


class PolicyVariant(str, Enum):
    SYM = "sym"
    ASYM_NO_REL = "asym_no_rel"
    REL_NO_ASYM = "rel_no_asym"
    ASYMDEX = "asymdex"

    @property
    def relative(self) -> bool:
        return self in (PolicyVariant.REL_NO_ASYM, PolicyVariant.ASYMDEX)

    @property
    def asymmetric(self) -> bool:
        return self in (PolicyVariant.ASYM_NO_REL, PolicyVariant.ASYMDEX)


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    length: int
    # joint_pos | joint_vel | hand_pose | object_pose | prev_action | base_delta | joints
    kind: str

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.length)


@dataclass(frozen=True)
class Layout:
    """Contiguous named segments of a flat vector."""

    segments: tuple[Segment, ...]
    include_joint_vels: bool = False
    include_prev_action: bool = False

    @classmethod
    def pack(cls, parts: list[tuple[str, int, str]], **flags) -> Layout:
        segs, off = [], 0
        for name, length, kind in parts:
            if length:
                segs.append(Segment(name, off, length, kind))
                off += length
        return cls(tuple(segs), **flags)

    @property
    def dim(self) -> int:
        return sum(s.length for s in self.segments)

    def __getitem__(self, name: str) -> Segment:
        for s in self.segments:
            if s.name == name:
                return s
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(s.name == name for s in self.segments)

    def get(self, vec: np.ndarray, name: str) -> np.ndarray:
        return np.asarray(vec)[..., self[name].slice]

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "include_joint_vels": self.include_joint_vels,
            "include_prev_action": self.include_prev_action,
            "segments": [
                {"name": s.name, "offset": s.offset, "length": s.length, "kind": s.kind} for s in self.segments
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> Layout:
        segs = tuple(Segment(s["name"], s["offset"], s["length"], s["kind"]) for s in d["segments"])
        return cls(segs, d.get("include_joint_vels", False), d.get("include_prev_action", False))


ObsLayout = Layout


def _joint_parts(prefix: str, hand: HandModel, vels: bool) -> list[tuple[str, int, str]]:
    parts = [(f"{prefix}_joint_pos", hand.n_joints_obs, "joint_pos")]
    if vels:
        parts.append((f"{prefix}_joint_vel", hand.n_joints_obs, "joint_vel"))
    return parts


def action_layout(variant: PolicyVariant, hand: HandModel) -> Layout:
    variant = PolicyVariant(variant)
    A = hand.n_joints_act
    if variant is PolicyVariant.ASYMDEX:
        parts = [("rel_base", 6, "base_delta"), ("dom_joints", A, "joints")]
    elif variant is PolicyVariant.SYM:
        parts = [("dom_base", 6, "base_delta"), ("dom_joints", A, "joints"),
                 ("fac_base", 6, "base_delta"), ("fac_joints", A, "joints")]
    elif variant is PolicyVariant.ASYM_NO_REL:
        parts = [("dom_base", 6, "base_delta"), ("dom_joints", A, "joints"), ("fac_base", 6, "base_delta")]
    else:
        parts = [("rel_base", 6, "base_delta"), ("dom_joints", A, "joints"), ("fac_joints", A, "joints")]
    return Layout.pack(parts)


def obs_layout(variant: PolicyVariant, hand: HandModel, include_joint_vels: bool = True,
               include_prev_action: bool = True) -> Layout:
    variant = PolicyVariant(variant)
    v = include_joint_vels
    dom = _joint_parts("dom", hand, v)
    fac = _joint_parts("fac", hand, v)
    if variant is PolicyVariant.ASYMDEX:
        parts = dom + [("rel_dom_base", 7, "hand_pose"), ("rel_dom_obj", 7, "object_pose")]
    elif variant is PolicyVariant.SYM:
        parts = fac + dom + [("fac_base", 7, "hand_pose"), ("dom_base", 7, "hand_pose"),
                             ("fac_obj", 7, "object_pose"), ("dom_obj", 7, "object_pose")]
    elif variant is PolicyVariant.ASYM_NO_REL:
        parts = dom + [("fac_base", 7, "hand_pose"), ("dom_base", 7, "hand_pose"),
                       ("fac_obj", 7, "object_pose"), ("dom_obj", 7, "object_pose")]
    else:
        parts = fac + dom + [("rel_dom_base", 7, "hand_pose"), ("rel_dom_obj", 7, "object_pose"),
                             ("rel_fac_obj", 7, "object_pose")]
    if include_prev_action:
        parts.append(("prev_action", action_layout(variant, hand).dim, "prev_action"))
    return Layout.pack(parts, include_joint_vels=include_joint_vels, include_prev_action=include_prev_action)


def space_dims(variant: PolicyVariant, hand: HandModel, include_joint_vels: bool = True,
               include_prev_action: bool = True) -> tuple[int, int]:
    return (obs_layout(variant, hand, include_joint_vels, include_prev_action).dim,
            action_layout(variant, hand).dim)


def frame_f(state: EnvState) -> Pose:
    """P_f: pose of the object held by the facilitating hand (object slot 0)."""
    if state.obj_pos.ndim != 3 or state.obj_pos.shape[1] < 1:
        raise ConfigError("variant", "relative spaces need a facilitating-hand object to define P_f")
    return state.obj_pose(0)


def build_observation(variant: PolicyVariant, state: EnvState, hand: HandModel, prev_action=None,
                      include_joint_vels: bool = True, include_prev_action: bool = True) -> np.ndarray:
    """Observation matrix of shape (n_envs, obs_dim)."""
    variant = PolicyVariant(variant)
    layout = obs_layout(variant, hand, include_joint_vels, include_prev_action)
    n = state.n
    out = np.empty((n, layout.dim))
    vals: dict[str, np.ndarray] = {}
    for prefix, h in (("fac", FAC), ("dom", DOM)):
        vals[f"{prefix}_joint_pos"] = state.joints[:, h]
        vals[f"{prefix}_joint_vel"] = state.joint_vels[:, h]
    if variant.relative:
        pf = frame_f(state)
        vals["rel_dom_base"] = geom.relative_pose(state.hand_pose(DOM), pf).to_array()
        vals["rel_dom_obj"] = geom.relative_pose(state.obj_pose(1), pf).to_array()
        vals["rel_fac_obj"] = geom.relative_pose(state.obj_pose(0), state.hand_pose(FAC)).to_array()
    else:
        vals["fac_base"] = state.hand_pose(FAC).to_array()
        vals["dom_base"] = state.hand_pose(DOM).to_array()
        vals["fac_obj"] = state.obj_pose(0).to_array()
        vals["dom_obj"] = state.obj_pose(1).to_array()
    if include_prev_action:
        act_dim = action_layout(variant, hand).dim
        prev = np.zeros((n, act_dim)) if prev_action is None else np.asarray(prev_action, dtype=float)
        if prev.shape != (n, act_dim):
            raise ValueError(f"previous action must have shape {(n, act_dim)}, got {prev.shape}")
        vals["prev_action"] = prev
    for seg in layout.segments:
        out[:, seg.slice] = vals[seg.name]
    return out


def _joint_targets(a: np.ndarray, hand: HandModel) -> np.ndarray:
    lim = hand.act_limits
    return lim[:, 0] + 0.5 * (a + 1.0) * (lim[:, 1] - lim[:, 0])


def _absolute_target(base: Pose, a: np.ndarray, max_t: float, max_r: float) -> Pose:
    return Pose(base.pos + max_t * a[:, :3], geom.quat_mul(geom.rotvec_to_quat(max_r * a[:, 3:6]), base.orient))


def decode_action(variant: PolicyVariant, action, state: EnvState, hand: HandModel,
                  controller: ControllerConfig | None = None, max_translation: float = 0.02,
                  max_rotation: float = 0.05) -> tuple[Pose, np.ndarray]:
    """Map policy actions in [-1, 1] to base pose targets (n, 2) and joint targets (n, 2, n_act).

    Both outputs are ordered (facilitating, dominant). Out-of-range entries are clipped.
    """
    variant = PolicyVariant(variant)
    layout = action_layout(variant, hand)
    a = np.asarray(action, dtype=float)
    if a.ndim == 1:
        a = a[None]
    if a.shape != (state.n, layout.dim):
        raise ValueError(f"action must have shape {(state.n, layout.dim)}, got {a.shape}")
    if np.isnan(a).any():
        raise ValueError("action contains NaN")
    a = np.clip(a, -1.0, 1.0)
    cfg = controller or ControllerConfig()
    base_d, base_f = state.hand_pose(DOM), state.hand_pose(FAC)

    if variant.relative:
        pf = frame_f(state)
        cur = geom.relative_pose(base_d, pf)
        d = layout.get(a, "rel_base")
        target = _absolute_target(cur, d, max_translation, max_rotation)
        tgt_d, tgt_f = eq1_targets(target, cur, base_d, base_f, pf.orient, cfg)
    else:
        tgt_d = _absolute_target(base_d, layout.get(a, "dom_base"), max_translation, max_rotation)
        if "fac_base" in layout:
            tgt_f = _absolute_target(base_f, layout.get(a, "fac_base"), max_translation, max_rotation)
        else:
            tgt_f = base_f
    pos = np.stack([tgt_f.pos, tgt_d.pos], axis=1)
    quat = np.stack([tgt_f.orient, tgt_d.orient], axis=1)

    joints = np.empty((state.n, 2, hand.n_joints_act))
    joints[:, DOM] = _joint_targets(layout.get(a, "dom_joints"), hand)
    if "fac_joints" in layout:
        joints[:, FAC] = _joint_targets(layout.get(a, "fac_joints"), hand)
    else:
        joints[:, FAC] = state.grasp_targets[:, FAC]
    return Pose(pos, quat), joints


def squash(raw_action) -> np.ndarray:
    """Unbounded Gaussian policy samples to the [-1, 1] action box."""
    return np.tanh(raw_action)


def add_action_noise(action, sigma: float, rng: np.random.Generator) -> np.ndarray:
    a = np.asarray(action, dtype=float)
    if sigma <= 0:
        return a
    return a + rng.normal(0.0, sigma, size=a.shape)


def add_observation_noise(obs, layout: Layout, rng: np.random.Generator, noise: NoiseSpec) -> np.ndarray:
    """Additive Gaussian observation noise by segment kind.

    Hand and object positions, and actuated/observed joint positions, get
    additive noise. Hand orientations are perturbed by a random rotation
    vector and stay unit quaternions.
    """
    out = np.array(obs, dtype=float, copy=True)
    for seg in layout.segments:
        block = out[..., seg.slice]
        if seg.kind == "joint_pos" and noise.hand_joint > 0:
            block += rng.normal(0.0, noise.hand_joint, size=block.shape)
        elif seg.kind == "object_pose" and noise.object_pos > 0:
            block[..., :3] += rng.normal(0.0, noise.object_pos, size=block[..., :3].shape)
        elif seg.kind == "hand_pose":
            if noise.hand_pos > 0:
                block[..., :3] += rng.normal(0.0, noise.hand_pos, size=block[..., :3].shape)
            if noise.hand_orient > 0:
                dq = geom.rotvec_to_quat(rng.normal(0.0, noise.hand_orient, size=block[..., :3].shape))
                block[..., 3:7] = geom.canonicalize(geom.quat_mul(dq, block[..., 3:7]))
        out[..., seg.slice] = block
    return out
