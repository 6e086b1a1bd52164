"""Task definitions: sampling ranges, object layout, thresholds and reward weights.

A ``TaskSpec`` starts from the built-in defaults of its task id and can be
overridden from a nested key-value tree (e.g. a YAML file); unknown keys and
malformed values raise ``ConfigError`` naming the offending key path.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from ..rewards import RewardCoeffs


class ConfigError(ValueError):
    """Invalid configuration value; ``path`` is the dotted key path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class TaskId(str, Enum):
    BLOCK_IN_CUP = "BlockInCup"
    STACK = "Stack"
    BOTTLE_CAP = "BottleCap"
    SWITCH = "Switch"
    RW_BLOCK_IN_CUP = "RwBlockInCup"
    RW_POUR = "RwPour"
    RW_TWIST_LID = "RwTwistLid"


class Articulation(str, Enum):
    NONE = "none"
    CAP = "cap"  # rigidly seated until the dominant hand pinches it off
    SWITCH = "switch"  # revolute button pressed by fingertip depth
    LID = "lid"  # revolute lid turned by the dominant base while pinched


Interval = tuple[float, float]


@dataclass
class HandSampling:
    pos: tuple[Interval, Interval, Interval]
    roll: Interval = (0.0, 0.0)
    # heading of the arm axis (local +x) about world z
    yaw: float = 0.0


@dataclass
class NoiseSpec:
    object_pos: float = 0.02
    hand_joint: float = 0.2
    hand_pos: float = 0.02
    hand_orient: float = 0.05
    action: float = 0.0
    friction: Interval = (1.0, 1.0)


@dataclass
class AcquisitionSpec:
    lift_height: float = 0.15
    grasp_horizon: int = 120
    pregrasp_jitter: float = 0.01


@dataclass
class TaskSpec:
    task: TaskId
    hand: str
    include_joint_vels: bool
    include_prev_action: bool
    dominant: HandSampling
    facilitating: HandSampling
    object_names: tuple[str, str]
    # object 1 starts in the dominant hand (else it is a child of object 0)
    dominant_holds: bool = True
    articulation: Articulation = Articulation.NONE
    child_offset: tuple[float, ...] = (0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0)
    articulation_range: Interval = (-math.inf, math.inf)
    # named points in object frames: {name: (object index, (x, y, z))}
    points: dict = field(default_factory=dict)
    success_threshold: float = 0.035
    upright_dot: float = 0.95
    horizon: int = 300
    dt: float = 1.0 / 60.0
    alpha: float = 0.5
    gravity: float = -9.81
    floor_z: float = 0.05
    grasp_radius: float = 0.03
    close_threshold: float = 0.5
    release_threshold: float = 0.25
    hold_closure: float = 0.8
    rest_closure: float = 0.3
    max_step_translation: float = 0.02
    max_step_rotation: float = 0.05
    press_gain: float = 0.5585 / 0.025
    press_depth_max: float = 0.04
    lid_rim_radius: float = 0.035
    reward: RewardCoeffs = field(default_factory=RewardCoeffs)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    acquisition: AcquisitionSpec = field(default_factory=AcquisitionSpec)

    def __post_init__(self):
        validate_task(self)

    @property
    def is_real_world(self) -> bool:
        return self.task.value.startswith("Rw")


_FIXED_FAC_BIC = HandSampling(((0.55, 0.55), (0.6, 0.6), (0.8, 0.8)), (0.0, 0.0), -math.pi / 2)
_CUP_POINTS = {"cup_mouth": (0, (0.0, 0.0, 0.06)), "cup_rim_f": (0, (0.0, 0.0, 0.06)), "cup_rim_d": (1, (0.0, 0.0, 0.06))}


def _defaults(task: TaskId) -> dict[str, Any]:
    sim = dict(hand="shadow", include_joint_vels=True, include_prev_action=True)
    rw = dict(
        hand="allegro",
        include_joint_vels=False,
        include_prev_action=False,
        reward=RewardCoeffs(beta=(1.0, 1.0, 1.0, -1.0)),
    )
    bic_dom = HandSampling(((0.3, 0.7), (-0.2, 0.0), (0.7, 1.1)), (-1.57, 1.57), math.pi / 2)
    if task is TaskId.BLOCK_IN_CUP:
        return dict(sim, dominant=bic_dom, facilitating=_FIXED_FAC_BIC,
                    object_names=("cup", "block"), points=dict(_CUP_POINTS), success_threshold=0.035)
    if task is TaskId.STACK:
        return dict(sim, dominant=bic_dom, facilitating=_FIXED_FAC_BIC,
                    object_names=("cup_f", "cup_d"), points=dict(_CUP_POINTS), success_threshold=0.02)
    if task is TaskId.BOTTLE_CAP:
        return dict(
            sim,
            dominant=HandSampling(((0.58, 0.62), (-0.21, -0.19), (0.58, 0.62)), (-1.0, 1.0), math.pi / 2),
            facilitating=HandSampling(((0.53, 0.57), (0.59, 0.61), (0.43, 0.45)), (-0.5, 0.5), -math.pi / 2),
            object_names=("bottle", "cap"),
            dominant_holds=False,
            articulation=Articulation.CAP,
            child_offset=(0.0, 0.0, 0.10, 1.0, 0.0, 0.0, 0.0),
            points={"bottle_top": (0, (0.0, 0.0, 0.10))},
            success_threshold=0.05,
        )
    if task is TaskId.SWITCH:
        return dict(
            sim,
            dominant=HandSampling(((0.2, 0.6), (-0.25, -0.05), (0.5, 0.9)), (-1.0, 1.0), math.pi / 2),
            facilitating=HandSampling(((0.2, 0.6), (0.05, 0.25), (0.41, 0.81)), (-1.0, 1.0), -math.pi / 2),
            object_names=("switch", "button"),
            dominant_holds=False,
            articulation=Articulation.SWITCH,
            # button sits on top of the body, hinged about the body's local y axis
            child_offset=(0.05, 0.0, 0.04, 1.0, 0.0, 0.0, 0.0),
            articulation_range=(0.0, 0.5585),
            success_threshold=0.3585,
        )
    if task is TaskId.RW_BLOCK_IN_CUP:
        return dict(
            rw,
            dominant=HandSampling(((0.40, 0.50), (-0.10, 0.0), (0.70, 0.80)), (-0.3, 0.3), math.pi / 2),
            facilitating=HandSampling(((0.45, 0.45), (0.30, 0.30), (0.58, 0.62)), (-0.1, 0.1), -math.pi / 2),
            object_names=("cup", "block"),
            points={"cup_mouth": (0, (0.0, 0.0, 0.06))},
            success_threshold=0.035,
        )
    if task is TaskId.RW_POUR:
        return dict(
            rw,
            dominant=HandSampling(((0.40, 0.50), (-0.05, 0.05), (0.75, 0.85)), (-1.1, 0.6), math.pi / 2),
            facilitating=HandSampling(((0.45, 0.45), (0.30, 0.30), (0.58, 0.62)), (-0.1, 0.1), -math.pi / 2),
            object_names=("cup_f", "cup_d"),
            points={"cup_mouth": (0, (0.0, 0.0, 0.06)), "cup_rim_f": (0, (0.0, 0.0, 0.06)),
                    "cup_rim_d": (1, (0.0, 0.0, 0.06))},
            success_threshold=0.035,
        )
    if task is TaskId.RW_TWIST_LID:
        return dict(
            rw,
            dominant=HandSampling(((0.44, 0.46), (0.105, 0.125), (0.67, 0.69)), (-0.05, 0.05), math.pi / 2),
            facilitating=HandSampling(((0.45, 0.45), (0.25, 0.25), (0.60, 0.60)), (0.0, 0.0), -math.pi / 2),
            object_names=("jar", "lid"),
            dominant_holds=False,
            articulation=Articulation.LID,
            child_offset=(0.0, 0.0, 0.08, 1.0, 0.0, 0.0, 0.0),
            success_threshold=3.0 * math.pi,
            horizon=800,
            noise=NoiseSpec(action=0.1, friction=(0.5, 1.5)),
        )
    raise ConfigError("task", f"unknown task {task!r}")


def _check_interval(path: str, iv) -> None:
    if len(iv) != 2:
        raise ConfigError(path, "interval needs exactly two numbers")
    lo, hi = iv
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ConfigError(path, f"sampling range must be finite, got {iv}")
    if lo > hi:
        raise ConfigError(path, f"interval lower bound exceeds upper bound: {iv}")


def validate_task(spec: TaskSpec) -> None:
    for name in ("dominant", "facilitating"):
        hs = getattr(spec, name)
        if len(hs.pos) != 3:
            raise ConfigError(f"{name}.pos", "needs three intervals (x, y, z)")
        for ax, iv in zip("xyz", hs.pos):
            _check_interval(f"{name}.pos.{ax}", iv)
        _check_interval(f"{name}.roll", hs.roll)
    if spec.horizon < 1:
        raise ConfigError("horizon", "must be >= 1")
    if not 0.0 <= spec.alpha <= 1.0:
        raise ConfigError("alpha", f"must lie in [0, 1], got {spec.alpha}")
    if spec.dt <= 0:
        raise ConfigError("dt", "must be positive")
    if not spec.release_threshold < spec.close_threshold:
        raise ConfigError("release_threshold", "must be below close_threshold")
    if spec.reward.success_bonus <= 0:
        raise ConfigError("reward.success_bonus", "must be positive")
    if spec.acquisition.grasp_horizon < 1:
        raise ConfigError("acquisition.grasp_horizon", "must be >= 1")


def _coerce(path: str, current: Any, value: Any, ftype: Any = None) -> Any:
    if dataclasses.is_dataclass(current):
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
        return _apply(path, current, value)
    if isinstance(current, Enum):
        try:
            return type(current)(value)
        except ValueError:
            choices = ", ".join(m.value for m in type(current))
            raise ConfigError(path, f"invalid value {value!r}; expected one of: {choices}") from None
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {value!r}")
        if current and isinstance(current[0], tuple):
            return tuple(tuple(float(x) for x in iv) for iv in value)
        try:
            return tuple(float(x) for x in value) if all(isinstance(x, (int, float)) for x in value) else tuple(value)
        except TypeError:
            raise ConfigError(path, f"malformed list {value!r}") from None
    if isinstance(current, dict):
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected a mapping, got {value!r}")
        out = dict(current)
        for k, v in value.items():
            obj, off = v
            out[k] = (int(obj), tuple(float(x) for x in off))
        return out
    return value


def _apply(prefix: str, obj: Any, overrides: dict) -> Any:
    fields = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for key, value in overrides.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in fields:
            raise ConfigError(path, "unknown key")
        changes[key] = _coerce(path, getattr(obj, key), value, fields[key].type)
    try:
        return dataclasses.replace(obj, **changes)
    except ConfigError as err:
        full = f"{prefix}.{err.path}" if prefix else err.path
        raise ConfigError(full, str(err).split(": ", 1)[-1]) from None


def make_task(task: str | TaskId, overrides: dict | None = None) -> TaskSpec:
    """Built-in task with optional nested overrides."""
    try:
        tid = TaskId(task)
    except ValueError:
        choices = ", ".join(t.value for t in TaskId)
        raise ConfigError("task", f"invalid value {task!r}; expected one of: {choices}") from None
    spec = TaskSpec(task=tid, **_defaults(tid))
    if overrides:
        overrides = {k: v for k, v in overrides.items() if k != "task"}
        spec = _apply("", spec, overrides)
    return spec


def task_from_tree(tree: dict) -> TaskSpec:
    if "task" not in tree:
        raise ConfigError("task", "missing required key")
    return make_task(tree["task"], tree)
