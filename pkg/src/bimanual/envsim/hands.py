from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FAC, DOM = 0, 1
HAND_NAMES = ("facilitating", "dominant")

# fingertip points in the hand-base frame; +x runs along the forearm toward the fingers
DEFAULT_FINGERTIPS = {
    "palm": (0.07, 0.0, 0.0),
    "index": (0.15, 0.02, 0.0),
    "thumb": (0.12, -0.02, 0.0),
}


@dataclass(frozen=True)
class HandModel:
    """Joint-count abstraction of a multi-fingered hand on a floating 6-DoF base.

    ``coupling[j]`` names the actuated joint that drives observed joint ``j``;
    the first ``n_joints_act`` entries are the identity.
    """

    name: str
    n_joints_obs: int
    n_joints_act: int
    joint_limits: np.ndarray
    coupling: tuple[int, ...]
    fingertip_offsets: dict = field(default_factory=lambda: dict(DEFAULT_FINGERTIPS))
    base_tracking_rate: float = 20.0
    joint_tracking_rate: float = 30.0

    def __post_init__(self):
        limits = np.asarray(self.joint_limits, dtype=float).reshape(self.n_joints_obs, 2)
        object.__setattr__(self, "joint_limits", limits)
        if self.n_joints_act > self.n_joints_obs:
            raise ValueError(f"{self.name}: n_joints_act {self.n_joints_act} > n_joints_obs {self.n_joints_obs}")
        if np.any(limits[:, 0] >= limits[:, 1]):
            raise ValueError(f"{self.name}: joint limits need lo < hi")
        if len(self.coupling) != self.n_joints_obs:
            raise ValueError(f"{self.name}: coupling must list every observed joint")
        if any(c < 0 or c >= self.n_joints_act for c in self.coupling):
            raise ValueError(f"{self.name}: coupling index out of range")
        for k in ("palm", "index", "thumb"):
            if k not in self.fingertip_offsets:
                raise ValueError(f"{self.name}: missing fingertip offset {k!r}")

    @property
    def act_limits(self) -> np.ndarray:
        return self.joint_limits[: self.n_joints_act]

    def joints_from_fraction(self, frac) -> np.ndarray:
        """Joint angles at a normalized closure (0 = lo, 1 = hi) for every observed joint."""
        lo, hi = self.joint_limits[:, 0], self.joint_limits[:, 1]
        return lo + np.asarray(frac, dtype=float)[..., None] * (hi - lo)

    def expand(self, act_targets: np.ndarray) -> np.ndarray:
        """Actuated targets -> targets for every observed joint via the coupling map."""
        return act_targets[..., list(self.coupling)]

    def closure(self, joints: np.ndarray) -> np.ndarray:
        """Mean normalized flexion of the actuated joints, in [0, 1]."""
        if self.n_joints_act == 0:
            return np.ones(joints.shape[:-1])
        lim = self.act_limits
        q = joints[..., : self.n_joints_act]
        return np.mean((q - lim[:, 0]) / (lim[:, 1] - lim[:, 0]), axis=-1)


def _shadow() -> HandModel:
    # 24 observed joints: wrist (2), thumb (5), four fingers (4 each, distal joints coupled)
    lim = [(-0.52, 0.17), (-0.70, 0.49)]
    lim += [(-1.05, 1.05), (0.0, 1.22), (-0.21, 0.21), (-0.70, 0.70), (0.0, 1.57)]
    for _ in range(4):
        lim += [(-0.35, 0.35), (0.0, 1.57), (0.0, 1.57)]
    lim += [(0.0, 0.79)]  # little-finger metacarpal
    lim += [(0.0, 1.57)] * 4  # coupled distal joints
    # 2 + 5 + 12 + 1 = 20 actuated; distal joints follow the middle joints
    coupling = tuple(range(20)) + (9, 12, 15, 18)
    return HandModel("shadow", 24, 20, np.array(lim), coupling)


def _allegro() -> HandModel:
    lim = []
    for _ in range(3):
        lim += [(-0.47, 0.47), (-0.196, 1.61), (-0.174, 1.709), (-0.227, 1.618)]
    lim += [(0.263, 1.396), (-0.105, 1.163), (-0.189, 1.644), (-0.162, 1.719)]
    return HandModel("allegro", 16, 16, np.array(lim), tuple(range(16)))


def bare_hand(n_obs: int = 0, n_act: int | None = None) -> HandModel:
    """A hand with uniform [0, 1.57] joints, handy for tests and dimension checks."""
    n_act = n_obs if n_act is None else n_act
    coupling = tuple(range(n_act)) + tuple(i % max(n_act, 1) for i in range(n_obs - n_act))
    return HandModel(f"bare{n_obs}", n_obs, n_act, np.tile([0.0, 1.57], (n_obs, 1)), coupling)


HAND_PRESETS = {"shadow": _shadow, "allegro": _allegro}


def get_hand(name: str) -> HandModel:
    try:
        return HAND_PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown hand model {name!r}; expected one of {sorted(HAND_PRESETS)}") from None
