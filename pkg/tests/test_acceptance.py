"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line (see ``conftest.py``); the lines are
repeated in the terminal summary. Criteria 8 and 9 are learning experiments
that take tens of minutes on one CPU core and carry the ``slow`` marker.
"""

from __future__ import annotations

import time

import numpy as np
import pytest
from oracles import gae_max_error, grad_check_errors

from bimanual import cli, geom, spaces
from bimanual.controller import ControllerConfig, eq1_targets
from bimanual.envsim import DOM, get_hand, make_rngs, make_task, reset_sample
from bimanual.envsim.state import object_point
from bimanual.geom import Pose
from bimanual.rewards import action_penalty, grasp_reward, task_components
from bimanual.spaces import PolicyVariant as V
from bimanual.trainer import TrainRunConfig, convergence_comparison, pipeline_comparison


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def test_criterion_01_dimensions(acceptance):
    want = {
        "shadow": {V.SYM: (176, 52), V.ASYM_NO_REL: (108, 32), V.REL_NO_ASYM: (163, 46), V.ASYMDEX: (88, 26)},
        "allegro": {V.SYM: (60, 44), V.ASYM_NO_REL: (44, 28), V.REL_NO_ASYM: (53, 38), V.ASYMDEX: (30, 22)},
    }
    flags = {"shadow": (True, True), "allegro": (False, False)}
    with Timer() as t:
        got = {h: {v: spaces.space_dims(v, get_hand(h), *flags[h]) for v in V} for h in want}
    ok = got == want and t.elapsed < 1.0
    acceptance(1, "dimension tables", ok, f"{sum(len(v) for v in got.values())} entries exact, {t.elapsed:.3f}s")
    assert ok, got


def test_criterion_02_controller(acceptance):
    rng = np.random.default_rng(2)
    n = 10_000
    with Timer() as t:
        base_d, base_f = Pose.random(rng, (n,)), Pose.random(rng, (n,))
        grasp = Pose.random(rng, (n,), scale=0.1)
        pf = geom.compose(base_f, grasp)
        cur = geom.relative_pose(base_d, pf)
        axis = rng.normal(size=(n, 3))
        axis /= np.linalg.norm(axis, axis=1, keepdims=True)
        rot = axis * rng.uniform(0, 0.1, (n, 1))
        target = Pose(cur.pos + rng.uniform(-0.1, 0.1, (n, 3)), geom.quat_mul(geom.rotvec_to_quat(rot), cur.orient))
        endpoints = True
        pos_err = rot_err = 0.0
        for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
            td, tf = eq1_targets(target, cur, base_d, base_f, pf.orient, ControllerConfig(alpha))
            if alpha == 1.0:
                endpoints &= np.array_equal(tf.pos, base_f.pos) and np.array_equal(tf.orient, base_f.orient)
            if alpha == 0.0:
                endpoints &= np.array_equal(td.pos, base_d.pos) and np.array_equal(td.orient, base_d.orient)
            got = geom.relative_pose(td, geom.compose(tf, grasp))
            pos_err = max(pos_err, float(np.abs(got.pos - target.pos).max()))
            dq = geom.quat_mul(got.orient, geom.quat_conj(target.orient))
            rot_err = max(rot_err, float(np.linalg.norm(geom.quat_to_rotvec(dq), axis=-1).max()))
    # "exact" position is checked to floating-point round-off of the pose compositions
    ok = endpoints and pos_err < 1e-9 and rot_err < 1e-6 and t.elapsed < 5.0
    acceptance(2, "controller endpoints and realization", ok,
               f"endpoints exact={endpoints}, max pos err {pos_err:.1e} m, max rot err {rot_err:.1e} rad "
               f"over {n} cases x 5 alphas, {t.elapsed:.2f}s")
    assert ok


def _transform(state, T):
    out = state.copy()
    for p, q in ((out.hand_pos, out.hand_quat), (out.obj_pos, out.obj_quat)):
        for k in range(p.shape[1]):
            moved = geom.compose(T, Pose(p[:, k], q[:, k]))
            p[:, k] = moved.pos
            q[:, k] = moved.orient
    return out


def test_criterion_03_frame_invariance(acceptance):
    rng = np.random.default_rng(3)
    worst = 0.0
    sym_min_change = np.inf
    with Timer() as t:
        for name in ("Switch", "BottleCap", "BlockInCup"):
            task = make_task(name)
            hand = get_hand(task.hand)
            s = reset_sample(task, make_rngs(7, 16))
            obs = {v: spaces.build_observation(v, s, hand) for v in (V.ASYMDEX, V.REL_NO_ASYM, V.SYM)}
            for _ in range(100 // 3 + 1):
                moved = _transform(s, Pose.random(rng, (), scale=2.0))
                for v in (V.ASYMDEX, V.REL_NO_ASYM):
                    worst = max(worst, float(np.abs(spaces.build_observation(v, moved, hand) - obs[v]).max()))
                change = np.abs(spaces.build_observation(V.SYM, moved, hand) - obs[V.SYM]).max()
                sym_min_change = min(sym_min_change, float(change))
    ok = worst <= 1e-9 and sym_min_change > 1e-6 and t.elapsed < 5.0
    acceptance(3, "frame invariance", ok,
               f"max relative-obs change {worst:.1e}, min Sym change {sym_min_change:.2e}, {t.elapsed:.2f}s")
    assert ok


def test_criterion_04_geometry_oracle(acceptance):
    rng = np.random.default_rng(4)
    n = 10_000
    with Timer() as t:
        a, b = Pose.random(rng, (n,), scale=3.0), Pose.random(rng, (n,), scale=3.0)
        Ma, Mb = a.matrix(), b.matrix()
        # oracle matrices built from the textbook quaternion-to-matrix formula
        err = max(
            np.abs(geom.compose(a, b).matrix() - Ma @ Mb).max(),
            np.abs(geom.inverse(a).matrix() - np.linalg.inv(Ma)).max(),
            np.abs(geom.relative_pose(b, a).matrix() - np.linalg.inv(Ma) @ Mb).max(),
        )
        v = rng.normal(size=(n, 3))
        v *= (rng.uniform(0, np.pi, n) / np.linalg.norm(v, axis=1))[:, None]
        rt = np.abs(geom.quat_to_rotvec(geom.rotvec_to_quat(v)) - v).max()
    ok = err < 1e-9 and rt < 1e-9 and t.elapsed < 5.0
    acceptance(4, "geometry vs matrix oracle", ok,
               f"max matrix err {err:.1e}, rotvec round trip {rt:.1e}, {t.elapsed:.2f}s")
    assert ok


def test_criterion_05_gae_oracle(acceptance):
    with Timer() as t:
        err = gae_max_error(draws=1000, max_len=10)
    ok = err < 1e-12 and t.elapsed < 5.0
    acceptance(5, "GAE vs brute force", ok, f"max err {err:.1e} over all masks up to length 10, {t.elapsed:.2f}s")
    assert ok


def test_criterion_06_gradient_checks(acceptance):
    with Timer() as t:
        errs = grad_check_errors(points=100)
    ok = all(e < 1e-4 for e in errs.values()) and t.elapsed < 30.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    acceptance(6, "backprop vs finite differences", ok, f"max rel err {detail}, {t.elapsed:.1f}s")
    assert ok


def test_criterion_07_reward_examples(acceptance):
    with Timer() as t:
        checks = {}
        task = make_task("Switch")
        hand = get_hand(task.hand)
        s = reset_sample(task, make_rngs(0, 1))
        s.artic[:] = 0.3
        checks["switch progress 0.6"] = task_components(task, hand, s)["progress"][0] == 0.6

        task = make_task("BlockInCup")
        s = reset_sample(task, make_rngs(0, 1))
        # axis-aligned frames so the palm lands on the mouth without round-off
        s.obj_quat[:, 0] = s.hand_quat[:, DOM] = [1.0, 0.0, 0.0, 0.0]
        s.obj_pos[:, 0] = [0.5, 0.5, 0.75]
        s.hand_pos[:, DOM] = object_point(s, *task.points["cup_mouth"]) - np.asarray(hand.fingertip_offsets["palm"])
        checks["hand term 1 at mouth"] = task_components(task, hand, s)["hand"][0] == 1.0

        checks["penalty(0.3, 0.4)"] = action_penalty(np.array([0.3, 0.4])) == -0.25
        x0 = np.array([0.05, -0.02, 0.1])
        u = np.array([0.0, 1.0, 0.0])
        shifted = x0 + np.array([0.0, 0.0, 0.1])
        checks["grasp zero crossing"] = grasp_reward(shifted, x0, u, u, 0.1, 10.0) == 1.0
    ok = all(checks.values()) and t.elapsed < 1.0
    failed = [k for k, v in checks.items() if not v]
    acceptance(7, "reward worked examples", ok,
               f"{len(checks) - len(failed)}/{len(checks)} exact" + (f", failed: {failed}" if failed else "")
               + f", {t.elapsed:.3f}s")
    assert ok


# reduced hidden sizes keep the learning runs inside their CPU time limits
DESK_NETS = dict(pi_hidden=(128, 128), v_hidden=(128, 128))


@pytest.mark.slow
def test_criterion_08_switch_learning(acceptance):
    cfg = TrainRunConfig(task="Switch", variant="asymdex", num_envs=64, steps_per_rollout=32,
                         budget=2_000_000, eval_episodes=128, **DESK_NETS)

    def progress(step, cand, base):
        print(f"  {step:>8d} asymdex {np.round(cand, 2).tolist()} sym {np.round(base, 2).tolist()}", flush=True)

    with Timer() as t:
        res = convergence_comparison(cfg, seeds=range(5), threshold=0.6, quorum=4, eval_every=10,
                                     progress=progress)
    n_reached = int(np.sum(res.reached >= 0))
    gap = res.candidate_at - res.baseline_at
    per_variant = t.elapsed / 2
    ok = n_reached >= 4 and gap >= 0.20 and per_variant <= 30 * 60
    acceptance(8, "Switch AsymDex vs Sym", ok,
               f"{n_reached}/5 seeds reached 60% (at {res.reached.tolist()}), at {res.converged_at} steps "
               f"AsymDex {res.candidate_at:.2f} vs Sym {res.baseline_at:.2f} (gap {gap * 100:.0f}pp), "
               f"{per_variant / 60:.1f} min per variant")
    assert ok


@pytest.mark.slow
def test_criterion_09_two_phase_pipeline(acceptance):
    cfg = TrainRunConfig(task="BlockInCup", variant="asymdex", num_envs=64, steps_per_rollout=32,
                         budget=PIPELINE_BUDGET, grasp_budget_fraction=0.15, **DESK_NETS)

    def progress(seed, combined, mono):
        print(f"  seed {seed}: two-phase {combined:.2f}, monolithic {mono:.2f}", flush=True)

    with Timer() as t:
        res = pipeline_comparison(cfg, seeds=range(3), episodes=200, progress=progress)
    gap = res.combined.mean() - res.monolithic.mean()
    ok = gap >= 0.15 and t.elapsed <= 3600
    acceptance(9, "BlockInCup two-phase vs monolithic", ok,
               f"two-phase {np.round(res.combined, 3).tolist()} vs monolithic {np.round(res.monolithic, 3).tolist()} "
               f"(gap {gap * 100:.0f}pp at {cfg.budget} steps each), {t.elapsed / 60:.1f} min")
    assert ok


PIPELINE_BUDGET = 2_000_000

DETERMINISM_CONFIG = """\
task: BottleCap
variant: asymdex
num_envs: 16
steps_per_rollout: 16
budget: 2560
seed: 11
domain_randomization: true
eval_every: 5
eval_episodes: 8
"""


def test_criterion_10_determinism(acceptance, tmp_path):
    cfg = tmp_path / "det.yaml"
    cfg.write_text(DETERMINISM_CONFIG)
    with Timer() as t:
        outs = []
        for k in range(2):
            root = tmp_path / f"root{k}"
            assert cli.main(["train", str(cfg), "--out", str(root)]) == 0
            run = next(root.iterdir())
            outs.append(((run / "metrics.csv").read_bytes(), (run / "eval.csv").read_bytes()))
    same = outs[0] == outs[1]
    rows = outs[0][0].count(b"\n") - 1
    ok = same and rows == 10 and t.elapsed < 300
    acceptance(10, "determinism", ok, f"metrics ({rows} rows) and eval CSVs byte-identical={same}, {t.elapsed:.1f}s")
    assert ok
