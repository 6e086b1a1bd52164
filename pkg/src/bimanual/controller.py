"""Relative-pose tracking controller for two hand bases.

A commanded change of the dominant base's pose relative to the held-object
frame P_f is split between the hands: the dominant base takes ``alpha`` of the
world-frame correction and the facilitating base ``alpha - 1`` of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geom
from .geom import Pose


@dataclass(frozen=True)
class ControllerConfig:
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def eq1_targets(
    target_rel: Pose,
    current_rel: Pose,
    base_d: Pose,
    base_f: Pose,
    frame_f_orient: np.ndarray,
    cfg: ControllerConfig,
) -> tuple[Pose, Pose]:
    """Base targets (dominant, facilitating) realizing ``target_rel``.

    The correction ``dist(target_rel, current_rel)`` is rotated into the world
    by the orientation of P_f. The dominant base gets ``alpha`` of it and the
    facilitating base ``alpha - 1``; rotations are left-composed exponentials.

    Both bases share the facilitating hand's rotation, so the facilitating
    position carries a lever-arm term pivoting on the dominant target. Without
    it the commanded relative position is only reached when the correction has
    no rotational part. The term vanishes for ``alpha = 1`` and for pure
    translations.
    """
    a = cfg.alpha
    delta = geom.pose_dist(target_rel, current_rel)
    dpos_w = geom.quat_rotate(frame_f_orient, delta.dpos)
    drot_w = geom.quat_rotate(frame_f_orient, delta.drot)

    dom_pos = base_d.pos + a * dpos_w
    dom_q = geom.quat_mul(geom.rotvec_to_quat(a * drot_w), base_d.orient)

    q_f = geom.rotvec_to_quat((a - 1.0) * drot_w)
    full_d = base_d.pos + dpos_w  # dominant target if the facilitating hand stayed put
    fac_pos = dom_pos + geom.quat_rotate(q_f, base_f.pos - full_d)
    fac_q = geom.quat_mul(q_f, base_f.orient)
    if a == 1.0:
        fac_pos, fac_q = base_f.pos, base_f.orient
    if a == 0.0:
        dom_pos, dom_q = base_d.pos, base_d.orient
    return Pose(dom_pos, dom_q), Pose(fac_pos, fac_q)


def track_joint_targets(current, target, rate: float, dt: float, limits=None) -> np.ndarray:
    """First-order approach toward ``target``, optionally clamped to ``limits`` (J, 2)."""
    current = np.asarray(current, dtype=float)
    target = np.asarray(target, dtype=float)
    if current.shape != target.shape:
        raise ValueError(f"joint vectors differ in shape: {current.shape} vs {target.shape}")
    frac = 1.0 if np.isinf(rate) else -np.expm1(-rate * dt)
    new = current + frac * (target - current)
    if limits is not None:
        lim = np.asarray(limits, dtype=float)
        new = np.clip(new, lim[:, 0], lim[:, 1])
    return new


def tracking_fraction(rate: float, dt: float) -> float:
    return 1.0 if np.isinf(rate) else float(-np.expm1(-rate * dt))
