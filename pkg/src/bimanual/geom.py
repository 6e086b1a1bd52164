"""Rigid-body pose algebra: positions plus unit quaternions (w, x, y, z).

Every function broadcasts over leading dimensions, so a ``Pose`` may hold a
single frame (``pos.shape == (3,)``) or a batch of frames (``(N, 3)``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SMALL_ANGLE = 1e-8
# |w| at or below this is treated as a half turn when fixing the quaternion sign
SIGN_TOL = 1e-12


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) ``v`` by unit quaternion(s) ``q``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def canonicalize(q: np.ndarray) -> np.ndarray:
    """Normalize and pick the sign with w >= 0.

    Half turns (|w| below ``SIGN_TOL``) instead make the first clearly
    nonzero of (x, y, z) positive, so round-off in w cannot flip the sign.
    """
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    # leave already-unit inputs untouched so canonicalization is idempotent bit for bit
    q = np.where(np.abs(norm - 1.0) <= 1e-15, q, q / norm)
    w = q[..., 0]
    xyz = q[..., 1:]
    nz = np.abs(xyz) > SIGN_TOL
    first = np.argmax(nz, axis=-1)
    lead = np.take_along_axis(xyz, first[..., None], axis=-1)[..., 0]
    half = np.abs(w) <= SIGN_TOL
    flip = np.where(half, lead < 0.0, w < 0.0)
    return np.where(flip[..., None], -q, q)


def rotvec_to_quat(v: np.ndarray) -> np.ndarray:
    """Exponential map from rotation vector (axis * angle) to unit quaternion."""
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    # sin(t/2)/t with its Taylor series near zero
    k = np.where(small, 0.5 - theta**2 / 48.0, np.sin(0.5 * safe) / safe)
    w = np.where(small, 1.0 - theta**2 / 8.0, np.cos(0.5 * safe))
    return canonicalize(np.concatenate([w, k * v], axis=-1))


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Logarithm map onto the principal branch, ``|v| <= pi``."""
    q = canonicalize(q)
    w = q[..., :1]
    xyz = q[..., 1:]
    s = np.linalg.norm(xyz, axis=-1, keepdims=True)
    small = s < SMALL_ANGLE
    safe_s = np.where(small, 1.0, s)
    safe_w = np.where(small, w, 1.0)
    factor = np.where(
        small,
        2.0 / safe_w * (1.0 - s**2 / (3.0 * safe_w**2)),
        2.0 * np.arctan2(s, w) / safe_s,
    )
    return factor * xyz


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def quat_axis(q: np.ndarray, axis: int) -> np.ndarray:
    """World direction of the frame's local x (0), y (1) or z (2) axis."""
    e = np.zeros(3)
    e[axis] = 1.0
    q = np.asarray(q, dtype=float)
    return quat_rotate(q, np.broadcast_to(e, q.shape[:-1] + (3,)))


def axis_angle_quat(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    return rotvec_to_quat(axis * angle[..., None])


@dataclass(frozen=True)
class Pose:
    pos: np.ndarray
    orient: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.pos, dtype=float)
        orient = canonicalize(self.orient)
        object.__setattr__(self, "pos", pos)
        object.__setattr__(self, "orient", orient)

    @classmethod
    def identity(cls, batch: tuple[int, ...] = ()) -> Pose:
        q = np.zeros(batch + (4,))
        q[..., 0] = 1.0
        return cls(np.zeros(batch + (3,)), q)

    @classmethod
    def from_array(cls, a) -> Pose:
        """Build from ``[px, py, pz, qw, qx, qy, qz]`` (last axis)."""
        a = np.asarray(a, dtype=float)
        return cls(a[..., :3], a[..., 3:7])

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.pos, self.orient], axis=-1)

    @classmethod
    def random(cls, rng: np.random.Generator, batch: tuple[int, ...] = (), scale: float = 1.0) -> Pose:
        q = rng.normal(size=batch + (4,))
        return cls(rng.uniform(-scale, scale, size=batch + (3,)), q)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous transform(s)."""
        shape = self.pos.shape[:-1]
        m = np.zeros(shape + (4, 4))
        m[..., :3, :3] = quat_to_matrix(self.orient)
        m[..., :3, 3] = self.pos
        m[..., 3, 3] = 1.0
        return m

    def transform_point(self, p) -> np.ndarray:
        return self.pos + quat_rotate(self.orient, p)

    def __getitem__(self, idx) -> Pose:
        return Pose(self.pos[idx], self.orient[idx])


@dataclass(frozen=True)
class PoseDelta:
    dpos: np.ndarray
    drot: np.ndarray

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.dpos, self.drot], axis=-1)


def compose(a: Pose, b: Pose) -> Pose:
    """Pose ``b`` (expressed in frame ``a``) mapped into ``a``'s parent frame."""
    return Pose(a.pos + quat_rotate(a.orient, b.pos), quat_mul(a.orient, b.orient))


def inverse(p: Pose) -> Pose:
    qi = quat_conj(p.orient)
    return Pose(-quat_rotate(qi, p.pos), qi)


def relative_pose(x: Pose, frame: Pose) -> Pose:
    """Express ``x`` in the coordinates of ``frame``."""
    return compose(inverse(frame), x)


def pose_dist(target: Pose, current: Pose) -> PoseDelta:
    """6D difference: world translation and the rotation vector taking current to target."""
    dq = quat_mul(target.orient, quat_conj(current.orient))
    return PoseDelta(target.pos - current.pos, quat_to_rotvec(dq))


def apply_delta(current: Pose, delta: PoseDelta, fraction=1.0) -> Pose:
    """Move ``current`` by ``fraction`` of ``delta`` (translation added, rotation left-composed)."""
    f = np.asarray(fraction, dtype=float)
    if f.ndim:
        f = f[..., None]
    dq = rotvec_to_quat(f * delta.drot)
    return Pose(current.pos + f * delta.dpos, quat_mul(dq, current.orient))
