"""Kinematic bimanual simulator with weld grasps and simple articulations.

Hand bases track pose targets with a first-order lag, fingers track joint
targets likewise. Objects are either welded to a hand, posed as a child of
object 0 (cap, button, lid), resting on a virtual support, or free under
gravity (semi-implicit Euler). There is no contact solver: grasping,
pressing and twisting are proximity rules evaluated every step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import geom
from ..controller import track_joint_targets, tracking_fraction
from ..geom import Pose
from .hands import DOM, FAC, HandModel, get_hand
from .state import EnvState, Phase, fingertip, object_point
from .tasks import Articulation, TaskId, TaskSpec


@dataclass
class StepResult:
    success: np.ndarray
    failed: np.ndarray
    done: np.ndarray
    fault: np.ndarray
    dropped: np.ndarray


def make_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def hand_for(task: TaskSpec) -> HandModel:
    return get_hand(task.hand)


def _heading(yaw: float, roll: float) -> np.ndarray:
    qz = geom.axis_angle_quat([0.0, 0.0, 1.0], yaw)
    qx = geom.axis_angle_quat([1.0, 0.0, 0.0], roll)
    return geom.quat_mul(qz, qx)


def horizon_of(state: EnvState, task: TaskSpec) -> np.ndarray:
    """Episode length: acquisition-start episodes also get the grasp-phase steps."""
    extra = np.where(state.phase == Phase.ACQUISITION, task.acquisition.grasp_horizon, 0)
    return task.horizon + extra


def _empty(n: int, hand: HandModel, rngs: list) -> EnvState:
    J, A = hand.n_joints_obs, hand.n_joints_act
    unit = np.zeros((n, 2, 4))
    unit[..., 0] = 1.0
    return EnvState(
        hand_pos=np.zeros((n, 2, 3)), hand_quat=unit.copy(),
        joints=np.zeros((n, 2, J)), joint_vels=np.zeros((n, 2, J)),
        joint_targets=np.zeros((n, 2, A)), grasp_targets=np.zeros((n, 2, A)),
        obj_pos=np.zeros((n, 2, 3)), obj_quat=unit.copy(),
        obj_linvel=np.zeros((n, 2, 3)), obj_angvel=np.zeros((n, 2, 3)),
        attached=-np.ones((n, 2), dtype=np.int64),
        grasp_pos=np.zeros((n, 2, 3)), grasp_quat=unit.copy(),
        is_child=np.zeros((n, 2), dtype=bool), supported=np.zeros((n, 2), dtype=bool),
        artic=np.zeros(n), artic_prev=np.zeros(n), friction=np.ones((n, 2)),
        step_count=np.zeros(n, dtype=np.int64), phase=np.full(n, int(Phase.INTERACTION), dtype=np.int64),
        done=np.zeros(n, dtype=bool), success=np.zeros(n, dtype=bool), failed=np.zeros(n, dtype=bool),
        rngs=list(rngs),
    )


def _sample_one(task: TaskSpec, rng: np.random.Generator, phase: Phase) -> dict:
    out = {}
    for key, hs in (("dom", task.dominant), ("fac", task.facilitating)):
        pos = np.array([rng.uniform(lo, hi) for lo, hi in hs.pos])
        roll = rng.uniform(*hs.roll)
        out[key] = (pos, _heading(hs.yaw, roll))
    out["friction"] = rng.uniform(*task.noise.friction, size=2)
    jit = task.acquisition.pregrasp_jitter
    out["jitter"] = rng.uniform(-jit, jit, size=(2, 3))
    return out


def reset_sample(task: TaskSpec, rngs, phase: Phase = Phase.INTERACTION, hand: HandModel | None = None) -> EnvState:
    """Fresh initial states, one per generator in ``rngs``.

    Interaction starts weld the held objects to their hands with identity grasp
    transforms. Acquisition starts lower both hands by the lift height, open
    the fingers and rest the held objects on virtual supports at (jittered)
    pre-grasp positions.
    """
    if isinstance(rngs, np.random.Generator):
        rngs = [rngs]
    hand = hand or hand_for(task)
    s = _empty(len(rngs), hand, rngs)
    _fill(s, task, hand, np.arange(s.n), phase)
    return s


def _fill(s: EnvState, task: TaskSpec, hand: HandModel, idx: np.ndarray, phase: Phase) -> None:
    acq = phase == Phase.ACQUISITION
    lift = np.array([0.0, 0.0, task.acquisition.lift_height])
    held = [True, task.dominant_holds]
    for i in idx:
        smp = _sample_one(task, s.rngs[i], phase)
        for h, key in ((FAC, "fac"), (DOM, "dom")):
            pos, q = smp[key]
            s.hand_pos[i, h] = pos - lift if acq else pos
            s.hand_quat[i, h] = q
        s.friction[i] = smp["friction"]
        s.obj_linvel[i] = 0.0
        s.obj_angvel[i] = 0.0
        s.artic[i] = s.artic_prev[i] = max(0.0, task.articulation_range[0])
        for k in (0, 1):
            s.grasp_pos[i, k] = 0.0
            s.grasp_quat[i, k] = (1.0, 0.0, 0.0, 0.0)
            s.is_child[i, k] = False
            s.supported[i, k] = False
            s.attached[i, k] = -1
            if not held[k]:
                s.is_child[i, k] = True
            elif acq:
                s.obj_pos[i, k] = s.hand_pos[i, k] + smp["jitter"][k]
                s.obj_quat[i, k] = s.hand_quat[i, k]
                s.supported[i, k] = True
            else:
                s.attached[i, k] = k
                s.obj_pos[i, k] = s.hand_pos[i, k]
                s.obj_quat[i, k] = s.hand_quat[i, k]
        for h in (FAC, DOM):
            hold = held[h] and not acq
            s.joints[i, h] = hand.joints_from_fraction(task.hold_closure if hold else (0.0 if acq else task.rest_closure))
            s.joint_targets[i, h] = s.joints[i, h, : hand.n_joints_act]
            s.grasp_targets[i, h] = hand.joints_from_fraction(task.hold_closure)[: hand.n_joints_act]
        s.joint_vels[i] = 0.0
        s.step_count[i] = 0
        s.phase[i] = int(phase)
        s.done[i] = s.success[i] = s.failed[i] = False
    _pose_children(s, task)


def reset_envs(state: EnvState, task: TaskSpec, mask, phase: Phase = Phase.INTERACTION,
               hand: HandModel | None = None) -> None:
    """Resample the environments selected by ``mask`` in place, using their own generators."""
    idx = np.flatnonzero(mask)
    if idx.size:
        _fill(state, task, hand or hand_for(task), idx, phase)


def _child_offset(task: TaskSpec, artic: np.ndarray) -> Pose:
    off = Pose.from_array(np.asarray(task.child_offset))
    n = artic.shape[0]
    if task.articulation is Articulation.SWITCH:
        axis = np.array([0.0, 1.0, 0.0])
    elif task.articulation is Articulation.LID:
        axis = np.array([0.0, 0.0, 1.0])
    else:
        return Pose(np.broadcast_to(off.pos, (n, 3)), np.broadcast_to(off.orient, (n, 4)))
    q = geom.quat_mul(off.orient, geom.rotvec_to_quat(axis * artic[:, None]))
    return Pose(np.broadcast_to(off.pos, (n, 3)), q)


def _pose_children(s: EnvState, task: TaskSpec) -> None:
    for k in (0, 1):
        m = s.is_child[:, k]
        if not m.any():
            continue
        parent = Pose(s.obj_pos[m, 0], s.obj_quat[m, 0])
        child = geom.compose(parent, _child_offset(task, s.artic[m]))
        s.obj_pos[m, k] = child.pos
        s.obj_quat[m, k] = child.orient


def _weld(s: EnvState) -> None:
    for k in (0, 1):
        h = s.attached[:, k]
        m = h >= 0
        if not m.any():
            continue
        rows = np.flatnonzero(m)
        base = Pose(s.hand_pos[rows, h[m]], s.hand_quat[rows, h[m]])
        obj = geom.compose(base, Pose(s.grasp_pos[m, k], s.grasp_quat[m, k]))
        s.obj_pos[m, k] = obj.pos
        s.obj_quat[m, k] = obj.orient
        s.obj_linvel[m, k] = 0.0
        s.obj_angvel[m, k] = 0.0


def _attach(s: EnvState, k: int, h: int, m: np.ndarray) -> None:
    if not m.any():
        return
    rel = geom.relative_pose(Pose(s.obj_pos[m, k], s.obj_quat[m, k]), Pose(s.hand_pos[m, h], s.hand_quat[m, h]))
    s.attached[m, k] = h
    s.grasp_pos[m, k] = rel.pos
    s.grasp_quat[m, k] = rel.orient
    s.is_child[m, k] = False
    s.supported[m, k] = False
    s.obj_linvel[m, k] = 0.0
    s.obj_angvel[m, k] = 0.0


def rim_distance(state: EnvState, task: TaskSpec, p: np.ndarray) -> np.ndarray:
    """Distance from points ``p`` to the rim circle of object 1 (the lid)."""
    c = state.obj_pos[:, 1]
    n = geom.quat_axis(state.obj_quat[:, 1], 2)
    d = p - c
    h = np.sum(d * n, axis=-1)
    radial = np.linalg.norm(d - h[:, None] * n, axis=-1)
    return np.hypot(h, radial - task.lid_rim_radius)


def update_articulation(state: EnvState, task: TaskSpec, hand: HandModel | None = None,
                        prev: EnvState | None = None) -> EnvState:
    """Apply the task's articulation rule in place and return ``state``.

    ``prev`` is the state before the current step; the lid rule needs it to
    measure how far the dominant base turned about the jar axis.
    """
    hand = hand or hand_for(task)
    s = state
    art = task.articulation
    if art is Articulation.NONE:
        return s
    index = fingertip(s, hand, DOM, "index")
    thumb = fingertip(s, hand, DOM, "thumb")
    closure = hand.closure(s.joints[:, DOM])
    if art is Articulation.CAP:
        cap = s.obj_pos[:, 1]
        r = task.grasp_radius
        pinch = (np.linalg.norm(index - cap, axis=-1) < r) & (np.linalg.norm(thumb - cap, axis=-1) < r)
        grab = s.is_child[:, 1] & pinch & (closure >= task.close_threshold)
        _attach(s, 1, DOM, grab)
    elif art is Articulation.SWITCH:
        c = s.obj_pos[:, 1]
        nrm = geom.quat_axis(s.obj_quat[:, 0], 2)
        press = np.zeros(s.n)
        for tip in (index, thumb):
            depth = np.sum((c - tip) * nrm, axis=-1)
            lateral = np.linalg.norm((tip - c) + depth[:, None] * nrm, axis=-1)
            contact = (lateral < task.grasp_radius) & (depth > 0.0) & (depth < task.press_depth_max)
            press = np.maximum(press, np.where(contact, depth, 0.0))
        lo, hi = task.articulation_range
        s.artic = np.clip(np.maximum(s.artic, task.press_gain * press), lo, hi)
    elif art is Articulation.LID:
        if prev is None:
            return s
        pinched = (rim_distance(s, task, index) < task.grasp_radius) & (rim_distance(s, task, thumb) < task.grasp_radius)
        r_old = geom.quat_mul(geom.quat_conj(prev.obj_quat[:, 0]), prev.hand_quat[:, DOM])
        r_new = geom.quat_mul(geom.quat_conj(s.obj_quat[:, 0]), s.hand_quat[:, DOM])
        turn = geom.quat_to_rotvec(geom.quat_mul(r_new, geom.quat_conj(r_old)))[:, 2]
        lo, hi = task.articulation_range
        s.artic = np.clip(s.artic + np.where(pinched, turn, 0.0), lo, hi)
    _pose_children(s, task)
    return s


def check_success(state: EnvState, task: TaskSpec) -> np.ndarray:
    t = task.task
    s = state
    thr = task.success_threshold
    if t in (TaskId.BLOCK_IN_CUP, TaskId.RW_BLOCK_IN_CUP, TaskId.STACK):
        return np.linalg.norm(s.obj_pos[:, 1] - s.obj_pos[:, 0], axis=-1) < thr
    if t is TaskId.BOTTLE_CAP:
        top = object_point(s, *task.points["bottle_top"])
        return (~s.is_child[:, 1]) & (np.linalg.norm(s.obj_pos[:, 1] - top, axis=-1) >= thr)
    if t is TaskId.SWITCH:
        return s.artic >= thr
    if t is TaskId.RW_POUR:
        rim_f = object_point(s, *task.points["cup_rim_f"])
        rim_d = object_point(s, *task.points["cup_rim_d"])
        upright = geom.quat_axis(s.obj_quat[:, 0], 2)[:, 2] > task.upright_dot
        return (np.linalg.norm(rim_d - rim_f, axis=-1) < thr) & upright
    if t is TaskId.RW_TWIST_LID:
        return s.artic >= thr
    raise ValueError(f"unknown task {t!r}")


def dropped(state: EnvState, task: TaskSpec) -> np.ndarray:
    return np.any(state.obj_pos[:, :, 2] < task.floor_z, axis=1)


def check_reset(state: EnvState, task: TaskSpec) -> np.ndarray:
    """Episode over: an object fell below the floor, time ran out, or the task succeeded."""
    out_of_time = state.step_count >= horizon_of(state, task)
    return dropped(state, task) | out_of_time | check_success(state, task)


def _finite_rows(*arrays) -> np.ndarray:
    ok = None
    for a in arrays:
        a = np.asarray(a, dtype=float)
        r = np.isfinite(a.reshape(a.shape[0], -1)).all(axis=1)
        ok = r if ok is None else ok & r
    return ok


def step(state: EnvState, task: TaskSpec, base_targets: Pose, joint_targets: np.ndarray,
         hand: HandModel | None = None, dt: float | None = None) -> tuple[EnvState, StepResult]:
    """Advance every environment by one control step.

    ``base_targets`` holds (n, 2) poses ordered (facilitating, dominant);
    ``joint_targets`` is (n, 2, n_joints_act). Environments whose targets are
    not finite keep their previous targets and are marked failed.
    """
    hand = hand or hand_for(task)
    dt = task.dt if dt is None else dt
    s = state.copy(share_rngs=True)
    n = s.n
    tpos = np.array(base_targets.pos, dtype=float, copy=True)
    tquat = np.array(base_targets.orient, dtype=float, copy=True)
    jt = np.array(joint_targets, dtype=float, copy=True)
    if jt.shape != (n, 2, hand.n_joints_act):
        raise ValueError(f"joint targets must have shape {(n, 2, hand.n_joints_act)}, got {jt.shape}")
    ok = _finite_rows(tpos, tquat, jt)
    fault = ~ok
    if fault.any():
        tpos[fault] = s.hand_pos[fault]
        tquat[fault] = s.hand_quat[fault]
        jt[fault] = s.joint_targets[fault]
    s.artic_prev = s.artic.copy()

    cur = Pose(s.hand_pos, s.hand_quat)
    moved = geom.apply_delta(cur, geom.pose_dist(Pose(tpos, tquat), cur),
                             tracking_fraction(hand.base_tracking_rate, dt))
    s.hand_pos, s.hand_quat = moved.pos, moved.orient

    old = s.joints
    s.joints = track_joint_targets(old, hand.expand(jt), hand.joint_tracking_rate, dt, hand.joint_limits)
    s.joint_vels = (s.joints - old) / dt
    s.joint_targets = jt
    closure = hand.closure(s.joints)

    rows = np.arange(n)
    for k in (0, 1):
        h = s.attached[:, k]
        rel = (h >= 0) & (closure[rows, np.maximum(h, 0)] < task.release_threshold)
        s.attached[rel, k] = -1

    _weld(s)

    free = (s.attached < 0) & ~s.is_child & ~s.supported
    if free.any():
        g = np.array([0.0, 0.0, task.gravity])
        s.obj_linvel[free] += g * dt
        s.obj_pos[free] += s.obj_linvel[free] * dt
        dq = geom.rotvec_to_quat(s.obj_angvel[free] * dt)
        s.obj_quat[free] = geom.canonicalize(geom.quat_mul(dq, s.obj_quat[free]))

    _pose_children(s, task)
    update_articulation(s, task, hand, prev=state)

    # designated holder (object k <-> hand k) grasps a loose object inside its grasp radius
    for k in (0, 1):
        loose = (s.attached[:, k] < 0) & ~s.is_child[:, k]
        if k == 1 and not task.dominant_holds:
            loose &= False
        near = np.linalg.norm(s.obj_pos[:, k] - s.hand_pos[:, k], axis=-1) < task.grasp_radius
        _attach(s, k, k, loose & near & (closure[:, k] >= task.close_threshold))
    _pose_children(s, task)

    s.step_count = s.step_count + 1
    s.success = check_success(s, task)
    drop = dropped(s, task)
    s.failed = s.failed | fault | drop
    s.done = check_reset(s, task) | fault
    return s, StepResult(s.success.copy(), s.failed.copy(), s.done.copy(), fault, drop)


__all__ = [
    "StepResult",
    "check_reset",
    "check_success",
    "dropped",
    "hand_for",
    "horizon_of",
    "make_rngs",
    "reset_envs",
    "reset_sample",
    "rim_distance",
    "step",
    "update_articulation",
]
