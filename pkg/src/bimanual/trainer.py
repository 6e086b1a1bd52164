"""Rollout collection, PPO training loops, evaluation and the two-phase pipeline."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geom, spaces
from .controller import ControllerConfig
from .envsim import sim
from .envsim.hands import DOM, FAC, HandModel
from .envsim.state import EnvState, Phase
from .envsim.tasks import ConfigError, TaskSpec, make_task
from .geom import Pose
from .rewards import grasp_reward, interaction_reward
from .rl import (
    ActorCritic,
    Adam,
    PpoConfig,
    RolloutBuffer,
    adaptive_lr,
    ppo_update,
    save_checkpoint,
)

log = logging.getLogger(__name__)

PHASES = ("interaction", "grasp", "combined", "monolithic")
METRIC_COLUMNS = ("env_steps", "success_rate", "mean_return", "approx_kl", "lr")
EVAL_COLUMNS = ("env_steps", "success_rate", "mean_return", "mean_length")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainRunConfig:
    task: str = "Switch"
    variant: str = "asymdex"
    num_envs: int = 64
    steps_per_rollout: int = 32
    budget: int = 204_800
    seed: int = 0
    domain_randomization: bool = False
    # interaction: pre-grasped start; grasp: one grasp policy; combined: two grasp
    # policies then an interaction policy; monolithic: one policy from the acquisition start
    phase: str = "interaction"
    grasp_hand: str = "facilitating"
    grasp_budget_fraction: float = 0.1
    ppo: PpoConfig = field(default_factory=PpoConfig)
    pi_hidden: tuple[int, ...] = (256, 256, 128)
    v_hidden: tuple[int, ...] = (512, 512, 512)
    reward_scale: float = 1.0
    eval_every: int = 0
    eval_episodes: int = 64
    eval_seed: int = 12345
    checkpoint_every: int = 0
    task_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.num_envs < 1 or self.steps_per_rollout < 1:
            raise ConfigError("num_envs", "num_envs and steps_per_rollout must be >= 1")
        if self.budget < self.num_envs * self.steps_per_rollout:
            raise ConfigError("budget", "must cover at least one rollout (num_envs * steps_per_rollout)")
        if self.phase not in PHASES:
            raise ConfigError("phase", f"invalid value {self.phase!r}; expected one of: {', '.join(PHASES)}")
        if self.grasp_hand not in ("facilitating", "dominant"):
            raise ConfigError("grasp_hand", "expected facilitating or dominant")
        try:
            spaces.PolicyVariant(self.variant)
        except ValueError:
            choices = ", ".join(v.value for v in spaces.PolicyVariant)
            raise ConfigError("variant", f"invalid value {self.variant!r}; expected one of: {choices}") from None
        if not 0.0 < self.grasp_budget_fraction < 0.5:
            raise ConfigError("grasp_budget_fraction", "must lie in (0, 0.5)")

    @property
    def batch(self) -> int:
        return self.num_envs * self.steps_per_rollout

    @property
    def num_updates(self) -> int:
        return self.budget // self.batch

    def task_spec(self) -> TaskSpec:
        return make_task(self.task, self.task_overrides)


@dataclass
class Episode:
    ret: float
    length: int
    success: bool


class TaskEnv:
    """N simulator instances driven by one policy variant, with automatic resets."""

    def __init__(self, task: TaskSpec, variant, n: int, seed: int, start: Phase = Phase.INTERACTION,
                 domain_randomization: bool = False, reward_scale: float = 1.0,
                 state: EnvState | None = None):
        self.task = task
        self.hand = sim.hand_for(task)
        self.variant = spaces.PolicyVariant(variant)
        self.start = start
        self.dr = domain_randomization
        self.reward_scale = reward_scale
        self.ctrl = ControllerConfig(task.alpha)
        env_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
        self.noise_rng = np.random.default_rng(noise_ss)
        if state is None:
            rngs = [np.random.default_rng(s) for s in env_ss.spawn(n)]
            state = sim.reset_sample(task, rngs, start, self.hand)
        self.state = state
        self.layout = spaces.obs_layout(self.variant, self.hand, task.include_joint_vels, task.include_prev_action)
        self.act_dim = spaces.action_layout(self.variant, self.hand).dim
        self.prev_action = np.zeros((state.n, self.act_dim))
        self.ep_return = np.zeros(state.n)
        self.ep_length = np.zeros(state.n, dtype=np.int64)
        self.env_steps = 0
        self.last_parts: dict[str, np.ndarray] = {}

    @property
    def n(self) -> int:
        return self.state.n

    @property
    def obs_dim(self) -> int:
        return self.layout.dim

    def observe(self) -> np.ndarray:
        obs = spaces.build_observation(self.variant, self.state, self.hand, self.prev_action,
                                       self.task.include_joint_vels, self.task.include_prev_action)
        if self.dr:
            obs = spaces.add_observation_noise(obs, self.layout, self.noise_rng, self.task.noise)
        return obs

    def step(self, raw_action: np.ndarray):
        """Advance with raw (unsquashed) policy actions; returns obs, reward, done, finished episodes."""
        a = spaces.squash(raw_action)
        cmd = spaces.add_action_noise(a, self.task.noise.action, self.noise_rng) if self.dr else a
        base, joints = spaces.decode_action(self.variant, cmd, self.state, self.hand, self.ctrl,
                                            self.task.max_step_translation, self.task.max_step_rotation)
        self.state, res = sim.step(self.state, self.task, base, joints, self.hand)
        self.env_steps += self.n
        reward, parts = interaction_reward(self.task, self.hand, self.state, a)
        self.last_parts = parts
        self.ep_return += reward
        self.ep_length += 1
        done = res.done.copy()
        finished = [(i, Episode(float(self.ep_return[i]), int(self.ep_length[i]), bool(res.success[i])))
                    for i in np.flatnonzero(done)]
        self.prev_action = a.copy()
        if done.any():
            sim.reset_envs(self.state, self.task, done, self.start, self.hand)
            self.prev_action[done] = 0.0
            self.ep_return[done] = 0.0
            self.ep_length[done] = 0
        return self.observe(), reward * self.reward_scale, done, finished


def grasp_layout(task: TaskSpec, hand: HandModel) -> spaces.Layout:
    """Grasp-policy observation: one hand's joints, its base in the object frame, previous action."""
    J = hand.n_joints_obs
    parts = [("joint_pos", J, "joint_pos")]
    if task.include_joint_vels:
        parts.append(("joint_vel", J, "joint_vel"))
    parts.append(("hand_in_object", 7, "hand_pose"))
    if task.include_prev_action:
        parts.append(("prev_action", hand.n_joints_act, "prev_action"))
    return spaces.Layout.pack(parts, include_joint_vels=task.include_joint_vels,
                              include_prev_action=task.include_prev_action)


def grasp_observation(state: EnvState, h: int, layout: spaces.Layout, prev_action: np.ndarray) -> np.ndarray:
    vals = {
        "joint_pos": state.joints[:, h],
        "joint_vel": state.joint_vels[:, h],
        "hand_in_object": geom.relative_pose(state.hand_pose(h), state.obj_pose(h)).to_array(),
        "prev_action": prev_action,
    }
    return np.concatenate([vals[seg.name] for seg in layout.segments], axis=1)


def finger_targets(hand: HandModel, a: np.ndarray) -> np.ndarray:
    lim = hand.act_limits
    return lim[:, 0] + 0.5 * (a + 1.0) * (lim[:, 1] - lim[:, 0])


class GraspEnv:
    """One hand closes its fingers on a supported object while both bases follow a scripted lift."""

    def __init__(self, task: TaskSpec, hand_idx: int, n: int, seed: int, reward_scale: float = 1.0,
                 domain_randomization: bool = False):
        if hand_idx == DOM and not task.dominant_holds:
            raise ConfigError("grasp_hand", f"{task.task.value} has no object for the dominant hand to grasp")
        self.task = task
        self.h = hand_idx
        self.hand = sim.hand_for(task)
        self.reward_scale = reward_scale
        self.dr = domain_randomization
        env_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
        self.noise_rng = np.random.default_rng(noise_ss)
        rngs = [np.random.default_rng(s) for s in env_ss.spawn(n)]
        self.state = sim.reset_sample(task, rngs, Phase.ACQUISITION, self.hand)
        self.act_dim = self.hand.n_joints_act
        self.layout = grasp_layout(task, self.hand)
        self.prev_action = np.zeros((n, self.act_dim))
        self.ep_return = np.zeros(n)
        self.env_steps = 0
        self._on_reset(np.ones(n, dtype=bool))

    @property
    def n(self) -> int:
        return self.state.n

    @property
    def obs_dim(self) -> int:
        return self.layout.dim

    def _rel(self) -> Pose:
        return geom.relative_pose(self.state.obj_pose(self.h), self.state.hand_pose(self.h))

    def _on_reset(self, mask: np.ndarray) -> None:
        if not hasattr(self, "start_pos"):
            self.start_pos = self.state.hand_pos.copy()
            self.start_quat = self.state.hand_quat.copy()
            self.x_init = self._rel().pos
        self.start_pos[mask] = self.state.hand_pos[mask]
        self.start_quat[mask] = self.state.hand_quat[mask]
        self.x_init[mask] = self._rel().pos[mask]

    def observe(self) -> np.ndarray:
        obs = grasp_observation(self.state, self.h, self.layout, self.prev_action)
        if self.dr:
            obs = spaces.add_observation_noise(obs, self.layout, self.noise_rng, self.task.noise)
        return obs

    def joint_targets(self, a: np.ndarray) -> np.ndarray:
        jt = self.state.joint_targets.copy()
        jt[:, self.h] = finger_targets(self.hand, a)
        return jt

    def step(self, raw_action: np.ndarray):
        a = spaces.squash(raw_action)
        s = self.state
        frac = np.minimum(1.0, (s.step_count + 1) / self.task.acquisition.grasp_horizon)
        pos = self.start_pos.copy()
        pos[..., 2] += self.task.acquisition.lift_height * frac[:, None]
        base = Pose(pos, self.start_quat)
        self.state, _ = sim.step(s, self.task, base, self.joint_targets(a), self.hand)
        self.env_steps += self.n
        s = self.state
        rel = self._rel()
        u_hand = geom.quat_axis(s.hand_quat[:, self.h], 2)
        u_obj = geom.quat_axis(s.obj_quat[:, self.h], 2)
        reward = grasp_reward(rel.pos, self.x_init, u_hand, u_obj, self.task.reward.grasp_alpha,
                              self.task.reward.grasp_beta)
        self.ep_return += reward
        done = s.step_count >= self.task.acquisition.grasp_horizon
        held = s.attached[:, self.h] == self.h
        finished = [(i, Episode(float(self.ep_return[i]), int(s.step_count[i]), bool(held[i])))
                    for i in np.flatnonzero(done)]
        self.prev_action = a.copy()
        if done.any():
            sim.reset_envs(s, self.task, done, Phase.ACQUISITION, self.hand)
            self._on_reset(done)
            self.prev_action[done] = 0.0
            self.ep_return[done] = 0.0
        return self.observe(), reward * self.reward_scale, done, finished


def collect_rollouts(model: ActorCritic, env, M: int, rng: np.random.Generator, obs: np.ndarray):
    """M steps of every environment under the stochastic policy.

    Returns the filled buffer, the observation after the last step, the raw
    observations seen (for the normalizer) and the episodes that finished.
    """
    N = env.n
    buf = RolloutBuffer.empty(M, N, env.obs_dim, env.act_dim, model.dtype)
    raw_obs = np.empty((M, N, env.obs_dim))
    finished: list[Episode] = []
    for t in range(M):
        raw_obs[t] = obs
        x = model.normalize(obs)
        mean = model.mean_action(x).astype(float)
        std = np.exp(model.log_std.astype(float))
        act = mean + std * rng.standard_normal(mean.shape)
        buf.obs[t] = x
        buf.actions[t] = act
        buf.log_probs[t] = _logp(mean, model.log_std, act)
        buf.values[t] = model.value(x)
        obs, reward, done, fin = env.step(act)
        buf.rewards[t] = reward
        buf.dones[t] = done
        finished.extend(ep for _, ep in fin)
    buf.values[M] = model.value(model.normalize(obs))
    return buf, obs, raw_obs, finished


def _logp(mean, log_std, act):
    from .rl.networks import gaussian_log_prob

    return gaussian_log_prob(mean, log_std.astype(float), act)


@dataclass
class EvalReport:
    success_rate: float
    mean_length: float
    mean_return: float
    episodes: int
    successes: int
    components: dict = field(default_factory=dict)


def _episode_loop(env, model: ActorCritic, episodes: int, rng=None, deterministic: bool = True,
                  max_steps: int = 100_000):
    """Run until each environment has finished one episode; returns first-episode records per env."""
    first: dict[int, Episode] = {}
    comp_sum: dict[str, float] = {}
    comp_n = 0
    obs = env.observe()
    steps = 0
    while len(first) < episodes and steps < max_steps:
        x = model.normalize(obs)
        mean = model.mean_action(x).astype(float)
        if deterministic:
            act = mean
        else:
            act = mean + np.exp(model.log_std.astype(float)) * rng.standard_normal(mean.shape)
        active = np.array([i not in first for i in range(env.n)])
        obs, _, _, fin = env.step(act)
        for k, v in getattr(env, "last_parts", {}).items():
            comp_sum[k] = comp_sum.get(k, 0.0) + float(np.sum(v[active]))
        comp_n += int(active.sum())
        for i, ep in fin:
            if i not in first:
                first[i] = ep
        steps += 1
    return [first[i] for i in sorted(first)], {k: v / max(comp_n, 1) for k, v in comp_sum.items()}


def _report(eps: list[Episode], comps: dict) -> EvalReport:
    n = len(eps)
    succ = sum(e.success for e in eps)
    return EvalReport(
        success_rate=succ / n if n else 0.0,
        mean_length=float(np.mean([e.length for e in eps])) if n else 0.0,
        mean_return=float(np.mean([e.ret for e in eps])) if n else 0.0,
        episodes=n,
        successes=succ,
        components=comps,
    )


def evaluate(model: ActorCritic, task: TaskSpec, variant, episodes: int, seed: int,
             start: Phase = Phase.INTERACTION, state: EnvState | None = None) -> EvalReport:
    """Deterministic (mean-action) episodes, one per parallel environment."""
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    env = TaskEnv(task, variant, episodes, seed, start, state=state)
    eps, comps = _episode_loop(env, model, episodes)
    return _report(eps, comps)


def evaluate_grasp(model: ActorCritic, task: TaskSpec, hand_idx: int, episodes: int, seed: int) -> EvalReport:
    env = GraspEnv(task, hand_idx, episodes, seed)
    eps, comps = _episode_loop(env, model, episodes)
    return _report(eps, comps)


def make_env(cfg: TrainRunConfig, task: TaskSpec, seed: int, kind: str):
    if kind == "grasp":
        h = FAC if cfg.grasp_hand == "facilitating" else DOM
        return GraspEnv(task, h, cfg.num_envs, seed, cfg.reward_scale, cfg.domain_randomization)
    start = Phase.ACQUISITION if kind == "monolithic" else Phase.INTERACTION
    return TaskEnv(task, cfg.variant, cfg.num_envs, seed, start, cfg.domain_randomization, cfg.reward_scale)


class Trainer:
    """PPO on one environment kind; call :meth:`update` repeatedly."""

    def __init__(self, cfg: TrainRunConfig, kind: str | None = None, budget: int | None = None):
        self.cfg = cfg
        self.kind = kind or cfg.phase
        self.budget = cfg.budget if budget is None else budget
        self.task = cfg.task_spec()
        if self.kind == "monolithic" and spaces.PolicyVariant(cfg.variant) is not spaces.PolicyVariant.SYM:
            log.warning("monolithic runs normally use the symmetric variant, got %s", cfg.variant)
        env_seed, net_seed, upd_seed = (int(s.generate_state(1)[0]) for s in
                                        np.random.SeedSequence(cfg.seed).spawn(3))
        self.env = make_env(cfg, self.task, env_seed, self.kind)
        self.model = ActorCritic.create(self.env.obs_dim, self.env.act_dim, np.random.default_rng(net_seed),
                                        cfg.pi_hidden, cfg.v_hidden)
        self.opt = Adam(lr=cfg.ppo.lr)
        self.rng = np.random.default_rng(upd_seed)
        self.obs = self.env.observe()
        self.recent: deque[Episode] = deque(maxlen=100)
        self.updates = 0
        self.rows: list[dict] = []
        self.eval_rows: list[dict] = []

    @property
    def env_steps(self) -> int:
        return self.env.env_steps

    @property
    def finished(self) -> bool:
        return self.env_steps + self.cfg.batch > self.budget

    def update(self) -> dict:
        cfg = self.cfg
        buf, self.obs, raw_obs, fin = collect_rollouts(self.model, self.env, cfg.steps_per_rollout, self.rng, self.obs)
        self.recent.extend(fin)
        stats = ppo_update(self.model, self.opt, buf, cfg.ppo, self.rng)
        self.model.norm.update(raw_obs)
        if cfg.ppo.adaptive_lr:
            self.opt.lr = adaptive_lr(self.opt.lr, stats["approx_kl"], cfg.ppo.kl_threshold)
        self.updates += 1
        row = {
            "env_steps": self.env_steps,
            "success_rate": float(np.mean([e.success for e in self.recent])) if self.recent else 0.0,
            "mean_return": float(np.mean([e.ret for e in self.recent])) if self.recent else 0.0,
            "approx_kl": float(stats["approx_kl"]),
            "lr": float(self.opt.lr),
        }
        self.rows.append(row)
        if stats["fault"] or not all(np.isfinite(v) for v in row.values()):
            raise TrainingError(f"non-finite update at env step {self.env_steps}: {row}")
        return row

    def evaluate(self, episodes: int | None = None, seed: int | None = None) -> EvalReport:
        n = episodes or self.cfg.eval_episodes
        seed = self.cfg.eval_seed if seed is None else seed
        if self.kind == "grasp":
            h = FAC if self.cfg.grasp_hand == "facilitating" else DOM
            rep = evaluate_grasp(self.model, self.task, h, n, seed)
        else:
            start = Phase.ACQUISITION if self.kind == "monolithic" else Phase.INTERACTION
            rep = evaluate(self.model, self.task, self.cfg.variant, n, seed, start)
        self.eval_rows.append({"env_steps": self.env_steps, "success_rate": rep.success_rate,
                               "mean_return": rep.mean_return, "mean_length": rep.mean_length})
        return rep

    def checkpoint(self, path) -> Path:
        return save_checkpoint(path, self.model, opt=self.opt, cfg=self.cfg.ppo, rng=self.rng,
                               extra={"env_steps": self.env_steps, "updates": self.updates, "kind": self.kind,
                                      "variant": self.cfg.variant, "task": self.cfg.task,
                                      "grasp_hand": self.cfg.grasp_hand})


def format_csv(rows: list[dict], columns=METRIC_COLUMNS) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([r[c] if isinstance(r[c], (int, np.integer)) else f"{r[c]:.10g}" for c in columns])
    return out.getvalue()


def _append_row(path: Path, row: dict, columns) -> None:
    new = not path.exists()
    with path.open("a", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        if new:
            w.writerow(columns)
        w.writerow([row[c] if isinstance(row[c], (int, np.integer)) else f"{row[c]:.10g}" for c in columns])


@dataclass
class TrainResult:
    model: ActorCritic
    rows: list[dict]
    eval_rows: list[dict]
    trainer: Trainer
    extra_models: dict = field(default_factory=dict)


def train_phase(cfg: TrainRunConfig, out_dir=None, kind: str | None = None, budget: int | None = None,
                tag: str = "") -> TrainResult:
    """Alternate rollouts and PPO updates until the env-step budget is spent.

    With ``out_dir`` the metrics stream to ``metrics{tag}.csv`` (and
    ``eval{tag}.csv`` when periodic evaluation is on) and checkpoints go to
    ``checkpoints/``.
    """
    tr = Trainer(cfg, kind, budget)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        for name in (f"metrics{tag}.csv", f"eval{tag}.csv"):
            (out / name).unlink(missing_ok=True)
    while not tr.finished:
        try:
            row = tr.update()
        except TrainingError:
            if out is not None:
                tr.checkpoint(out / "checkpoints" / f"diagnostic{tag}.ckpt")
            raise
        if out is not None:
            _append_row(out / f"metrics{tag}.csv", row, METRIC_COLUMNS)
        if cfg.eval_every and tr.updates % cfg.eval_every == 0:
            tr.evaluate()
            if out is not None:
                _append_row(out / f"eval{tag}.csv", tr.eval_rows[-1], EVAL_COLUMNS)
        if out is not None and cfg.checkpoint_every and tr.updates % cfg.checkpoint_every == 0:
            tr.checkpoint(out / "checkpoints" / f"policy{tag}_{tr.updates:06d}.ckpt")
    if out is not None:
        tr.checkpoint(out / "checkpoints" / f"policy{tag}_final.ckpt")
    return TrainResult(tr.model, tr.rows, tr.eval_rows, tr)


def budget_split(cfg: TrainRunConfig, task: TaskSpec) -> dict[str, int]:
    """Env steps per stage of the two-phase pipeline; the stages sum to ``cfg.budget`` exactly."""
    stages = ["grasp_facilitating"] + (["grasp_dominant"] if task.dominant_holds else [])
    per = int(cfg.budget * cfg.grasp_budget_fraction) // cfg.batch * cfg.batch
    per = max(per, cfg.batch)
    split = {s: per for s in stages}
    split["interaction"] = cfg.budget - per * len(stages)
    return split


def train_two_phase(cfg: TrainRunConfig, out_dir=None) -> TrainResult:
    """Grasp policies for each holding hand, then the interaction policy, within one total budget.

    The interaction stage receives whatever the grasp stages left, so the
    total env-step count matches a single-phase run with the same budget
    (up to the final partial rollout, which no stage runs).
    """
    task = cfg.task_spec()
    split = budget_split(cfg, task)
    models = {}
    total_rows = []
    offset = 0
    for stage, b in split.items():
        if stage.startswith("grasp"):
            sub = dataclasses.replace(cfg, grasp_hand=stage.split("_", 1)[1], phase="grasp")
            res = train_phase(sub, out_dir, kind="grasp", budget=b, tag=f"_{stage}")
        else:
            sub = dataclasses.replace(cfg, phase="interaction")
            res = train_phase(sub, out_dir, kind="interaction", budget=b, tag="_interaction")
        models[stage] = res.model
        for r in res.rows:
            total_rows.append({**r, "env_steps": r["env_steps"] + offset})
        offset += res.trainer.env_steps
    return TrainResult(models["interaction"], total_rows, res.eval_rows, res.trainer, models)


def two_phase_rollout(grasp_policies: dict[int, ActorCritic], interaction_policy: ActorCritic, task: TaskSpec,
                      variant, episodes: int, seed: int, state: EnvState | None = None) -> np.ndarray:
    """Per-episode task success of grasp-then-interact episodes (mean actions throughout).

    Grasp policies are keyed by hand index and drive only their hand's
    fingers while both bases follow the scripted lift. An episode whose
    required objects are not all welded when the lift ends counts as a
    failure. States already in the interaction phase skip straight to the
    interaction policy.
    """
    hand = sim.hand_for(task)
    if state is None:
        ss = np.random.SeedSequence(seed).spawn(episodes)
        state = sim.reset_sample(task, [np.random.default_rng(s) for s in ss], Phase.ACQUISITION, hand)
    grasped = np.ones(state.n, dtype=bool)
    if np.any(state.phase == Phase.ACQUISITION):
        state = _run_grasp_phase(grasp_policies, task, hand, state)
        need = [FAC] + ([DOM] if task.dominant_holds else [])
        for h in need:
            grasped &= state.attached[:, h] == h
        state.phase[:] = int(Phase.INTERACTION)
        state.step_count[:] = 0
        state.grasp_targets[:, FAC] = state.joint_targets[:, FAC]
        state.done[:] = False
    env = TaskEnv(task, variant, state.n, seed, Phase.INTERACTION, state=state)
    done = np.zeros(state.n, dtype=bool)
    success = np.zeros(state.n, dtype=bool)
    obs = env.observe()
    for _ in range(task.horizon + 1):
        act = interaction_policy.mean_action(interaction_policy.normalize(obs)).astype(float)
        obs, _, d, fin = env.step(act)
        for i, ep in fin:
            if not done[i]:
                success[i] = ep.success
        done |= d
        if done.all():
            break
    return success & grasped


def _run_grasp_phase(policies: dict[int, ActorCritic], task: TaskSpec, hand: HandModel,
                     state: EnvState) -> EnvState:
    n = state.n
    start = Pose(state.hand_pos.copy(), state.hand_quat.copy())
    layout = grasp_layout(task, hand)
    prev = {h: np.zeros((n, hand.n_joints_act)) for h in policies}
    T = task.acquisition.grasp_horizon
    for t in range(T):
        jt = state.joint_targets.copy()
        for h, pol in policies.items():
            obs = grasp_observation(state, h, layout, prev[h])
            prev[h] = spaces.squash(pol.mean_action(pol.normalize(obs)).astype(float))
            jt[:, h] = finger_targets(hand, prev[h])
        pos = start.pos.copy()
        pos[..., 2] += task.acquisition.lift_height * min(1.0, (t + 1) / T)
        state, _ = sim.step(state, task, Pose(pos, start.orient), jt, hand)
    return state


@dataclass
class ConvergenceResult:
    """Lockstep multi-seed comparison of a candidate variant against a baseline."""

    steps: list[int]
    candidate: np.ndarray  # (rounds, seeds) evaluation success
    baseline: np.ndarray  # (rounds, seeds); baseline runs stop at the convergence round
    reached: np.ndarray  # (seeds,) first env-step count at or above threshold, -1 if never
    converged_at: int | None  # env steps at which the quorum had been reached
    candidate_at: float
    baseline_at: float


def convergence_comparison(cfg: TrainRunConfig, seeds, baseline_variant: str = "sym", threshold: float = 0.6,
                           quorum: int | None = None, eval_every: int = 10, progress=None) -> ConvergenceResult:
    """Train one run per seed for ``cfg.variant`` and for ``baseline_variant`` in lockstep.

    Every ``eval_every`` updates all runs are evaluated on the same episodes.
    The convergence step is the first evaluation round by which ``quorum``
    candidate seeds have reached ``threshold``; training stops there (or at
    ``cfg.budget``) and both variants are compared at that round.
    """
    seeds = list(seeds)
    quorum = len(seeds) if quorum is None else quorum
    cand = [Trainer(dataclasses.replace(cfg, seed=s)) for s in seeds]
    base = [Trainer(dataclasses.replace(cfg, seed=s, variant=baseline_variant)) for s in seeds]
    reached = np.full(len(seeds), -1)
    steps: list[int] = []
    c_hist, b_hist = [], []
    converged = None
    while converged is None and not cand[0].finished:
        c_row, b_row = [], []
        for group, row in ((cand, c_row), (base, b_row)):
            for tr in group:
                for _ in range(eval_every):
                    if tr.finished:
                        break
                    tr.update()
                row.append(tr.evaluate().success_rate)
        steps.append(cand[0].env_steps)
        c_hist.append(c_row)
        b_hist.append(b_row)
        hit = (np.array(c_row) >= threshold) & (reached < 0)
        reached[hit] = steps[-1]
        if np.sum(reached >= 0) >= quorum:
            converged = steps[-1]
        if progress is not None:
            progress(steps[-1], c_row, b_row)
    c, b = np.array(c_hist), np.array(b_hist)
    return ConvergenceResult(steps, c, b, reached, converged, float(c[-1].mean()), float(b[-1].mean()))


@dataclass
class PipelineResult:
    combined: np.ndarray  # per-seed two-phase success rate
    monolithic: np.ndarray  # per-seed single-phase success rate
    episodes: int


def pipeline_comparison(cfg: TrainRunConfig, seeds, episodes: int = 200, baseline_variant: str = "sym",
                        eval_seed: int = 2024, progress=None) -> PipelineResult:
    """Two-phase pipeline (``cfg.variant``) against a monolithic run at the same env-step budget.

    Both are scored on acquisition-start episodes drawn from ``eval_seed``.
    """
    task = cfg.task_spec()
    combined, mono = [], []
    for s in seeds:
        res = train_two_phase(dataclasses.replace(cfg, seed=s, phase="combined"))
        grasp = {FAC: res.extra_models["grasp_facilitating"]}
        if task.dominant_holds:
            grasp[DOM] = res.extra_models["grasp_dominant"]
        combined.append(float(two_phase_rollout(grasp, res.model, task, cfg.variant, episodes, eval_seed).mean()))
        mcfg = dataclasses.replace(cfg, seed=s, phase="monolithic", variant=baseline_variant)
        m = train_phase(mcfg, kind="monolithic")
        rep = evaluate(m.model, task, baseline_variant, episodes, eval_seed, Phase.ACQUISITION)
        mono.append(rep.success_rate)
        if progress is not None:
            progress(s, combined[-1], mono[-1])
    return PipelineResult(np.array(combined), np.array(mono), episodes)
