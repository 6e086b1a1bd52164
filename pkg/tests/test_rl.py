from __future__ import annotations

import math

import numpy as np
import pytest
from oracles import gae_brute_force, gae_max_error, grad_check_errors, mlp_oracle

from bimanual.rl import (
    ActorCritic,
    Adam,
    CheckpointError,
    PpoConfig,
    RolloutBuffer,
    RunningNorm,
    adaptive_lr,
    approx_kl,
    elu,
    gae_advantages,
    gaussian_log_prob,
    load_checkpoint,
    mlp_forward,
    normalize_advantages,
    ppo_update,
    save_checkpoint,
)
from bimanual.rl.checkpoint import decode, encode
from bimanual.rl.networks import init_mlp
from bimanual.rl.ppo import clipped_objective, loss_and_grads


def test_elu_definition():
    assert elu(np.array(-np.inf)) == -1.0
    assert elu(np.array(0.0)) == 0.0
    assert elu(np.array(1.0)) == 1.0
    assert elu(np.array(-1.0)) == pytest.approx(math.exp(-1) - 1, abs=1e-16)


def test_zero_network_outputs_zero():
    params = [(np.zeros((5, 3)), np.zeros(3)), (np.zeros((3, 2)), np.zeros(2))]
    assert np.array_equal(mlp_forward(params, np.ones((4, 5))), np.zeros((4, 2)))


def test_forward_matches_loop_oracle():
    rng = np.random.default_rng(0)
    params = init_mlp((7, 6, 5, 3), rng, dtype=np.float64)
    params = [(W + rng.normal(scale=0.3, size=W.shape), b + rng.normal(size=b.shape)) for W, b in params]
    x = rng.normal(size=(20, 7))
    assert np.abs(mlp_forward(params, x) - mlp_oracle(params, x)).max() < 1e-10


def test_forward_shape_mismatch():
    params = init_mlp((4, 3, 2), np.random.default_rng(0))
    with pytest.raises(ValueError):
        mlp_forward(params, np.zeros((2, 5)))


def test_network_shapes_chain():
    m = ActorCritic.create(10, 4, np.random.default_rng(0))
    sizes = [W.shape for W, _ in m.pi]
    assert sizes == [(10, 256), (256, 256), (256, 128), (128, 4)]
    assert [W.shape for W, _ in m.v][-1] == (512, 1)
    assert np.array_equal(m.log_std, np.zeros(4))


def test_orthogonal_init_columns():
    W = init_mlp((8, 32), np.random.default_rng(1), hidden_gain=1.0, out_gain=1.0, dtype=np.float64)[0][0]
    assert np.allclose(W @ W.T, np.eye(8), atol=1e-12)


def test_gaussian_log_prob_examples():
    assert gaussian_log_prob(np.zeros(1), np.zeros(1), np.zeros(1)) == pytest.approx(-0.5 * math.log(2 * math.pi))
    # matches a product of univariate densities
    rng = np.random.default_rng(2)
    mu, ls, a = rng.normal(size=3), rng.uniform(-1, 1, 3), rng.normal(size=3)
    sd = np.exp(ls)
    dens = np.prod(np.exp(-0.5 * ((a - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi)))
    assert gaussian_log_prob(mu, ls, a) == pytest.approx(math.log(dens), abs=1e-12)


def test_sampling_statistics_and_small_std_limit():
    rng = np.random.default_rng(3)
    m = ActorCritic.create(3, 2, rng, pi_hidden=(8,), v_hidden=(8,), dtype=np.float64)
    m.log_std[:] = [0.3, -0.4]
    obs = np.tile(rng.normal(size=(1, 3)), (100_000, 1))
    a, _, _ = m.act(obs, rng)
    mean = m.mean_action(m.normalize(obs[:1]))[0]
    sd = np.exp(m.log_std)
    assert np.all(np.abs(a.mean(axis=0) - mean) < 3 * sd / math.sqrt(len(a)))
    m.log_std[:] = -5.0
    m.clamp()
    a, _, _ = m.act(obs[:10], rng)
    assert np.allclose(a, mean, rtol=0, atol=6 * np.exp(-5.0))
    det, _, _ = m.act(obs[:10], rng, deterministic=True)
    assert np.allclose(det, mean, rtol=0, atol=1e-12)


def test_log_std_clamped():
    m = ActorCritic.create(3, 2, np.random.default_rng(0), pi_hidden=(4,), v_hidden=(4,))
    m.log_std[:] = [-9.0, 7.0]
    m.clamp()
    assert np.array_equal(m.log_std, np.array([-5.0, 2.0], dtype=np.float32))


def test_gae_single_terminal_step():
    adv, ret = gae_advantages(np.array([[1.0]]), np.zeros((2, 1)), np.array([[1.0]]), 0.98, 0.95)
    assert adv[0, 0] == 1.0 and ret[0, 0] == 1.0


def test_gae_two_step_example():
    r = np.array([[0.0], [1.0]])
    v = np.zeros((3, 1))
    d = np.zeros((2, 1))
    adv, _ = gae_advantages(r, v, d, 0.98, 0.95)
    assert np.allclose(adv, gae_brute_force(r, v, d, 0.98, 0.95), rtol=0, atol=1e-12)
    assert adv[0, 0] == pytest.approx(0.98 * 0.95, abs=1e-15)


def test_gae_masking():
    rng = np.random.default_rng(4)
    r, v = rng.normal(size=(6, 1)), rng.normal(size=(7, 1))
    d = np.zeros((6, 1))
    d[2] = 1.0
    a1, _ = gae_advantages(r, v, d, 0.98, 0.95)
    r2, v2 = r.copy(), v.copy()
    r2[3:] += 5.0
    v2[3:] -= 2.0
    a2, _ = gae_advantages(r2, v2, d, 0.98, 0.95)
    assert np.array_equal(a1[:3], a2[:3])


def test_gae_matches_brute_force_small():
    assert gae_max_error(draws=20, max_len=6) < 1e-12


def test_gae_requires_bootstrap():
    with pytest.raises(ValueError):
        gae_advantages(np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((3, 1)), 0.9, 0.9)


def test_advantage_normalization():
    adv = np.random.default_rng(5).normal(3.0, 7.0, 4096)
    n = normalize_advantages(adv)
    assert abs(n.mean()) < 1e-10
    assert abs(n.var() - 1.0) < 1e-6


def test_clip_arithmetic():
    assert clipped_objective(np.array(1.5), np.array(1.0), 0.2) == pytest.approx(1.2)
    assert clipped_objective(np.array(0.5), np.array(-1.0), 0.2) == pytest.approx(-0.8)
    assert clipped_objective(np.array(0.5), np.array(1.0), 0.2) == pytest.approx(0.5)


def test_unit_ratio_gives_policy_gradient():
    # with rho == 1 the surrogate gradient equals -mean(A * grad log pi)
    rng = np.random.default_rng(6)
    m = ActorCritic.create(4, 2, rng, pi_hidden=(3,), v_hidden=(3,), dtype=np.float64)
    obs = rng.normal(size=(8, 4))
    act = rng.normal(size=(8, 2))
    lp = m.log_prob_normalized(obs, act)
    adv = rng.normal(size=8)
    _, g = loss_and_grads(m, obs, act, lp, adv, np.zeros(8), PpoConfig(), terms=("surrogate",))
    mean = m.mean_action(obs)
    inv_var = np.exp(-2 * m.log_std)
    d_logstd = -np.mean(adv[:, None] * ((act - mean) ** 2 * inv_var - 1.0), axis=0)
    assert np.allclose(g[len(m.pi) * 2], d_logstd, atol=1e-12)


def test_approx_kl_estimator():
    assert approx_kl(np.zeros(10)) == 0.0
    lr = np.random.default_rng(7).normal(scale=0.3, size=1000)
    assert approx_kl(lr) > 0
    assert approx_kl(np.array([math.log(2.0)])) == pytest.approx(1.0 - math.log(2.0))


def test_adaptive_lr_rule():
    assert adaptive_lr(1e-3, 0.016, 0.016) == 1e-3
    assert adaptive_lr(1e-3, 0.04, 0.016) == pytest.approx(1e-3 / 1.5)
    assert adaptive_lr(1e-3, 0.001, 0.016) == pytest.approx(1.5e-3)
    assert adaptive_lr(1e-6, 0.0, 0.016) <= 1e-2
    assert adaptive_lr(9e-3, 0.0, 0.016) == 1e-2
    assert adaptive_lr(1e-6, 1.0, 0.016) == 1e-6
    # monotone in the observed divergence
    lrs = [adaptive_lr(1e-3, k, 0.016) for k in np.linspace(0, 0.1, 50)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_gradients_match_finite_differences():
    errs = grad_check_errors(points=5, seed=1)
    for term, e in errs.items():
        assert e < 1e-4, term


def make_buffer(rng, M=16, N=8, obs_dim=5, act_dim=3, model=None):
    buf = RolloutBuffer.empty(M, N, obs_dim, act_dim)
    buf.obs[...] = rng.normal(size=buf.obs.shape)
    buf.actions[...] = rng.normal(size=buf.actions.shape)
    if model is not None:
        buf.log_probs[...] = model.log_prob_normalized(buf.obs.reshape(-1, obs_dim), buf.actions.reshape(-1, act_dim)).reshape(M, N)
    buf.rewards[...] = rng.normal(size=buf.rewards.shape)
    buf.values[...] = rng.normal(size=buf.values.shape)
    buf.dones[...] = rng.random(buf.dones.shape) < 0.1
    return buf


def test_lr_zero_update_is_bit_identical():
    rng = np.random.default_rng(8)
    m = ActorCritic.create(5, 3, rng, pi_hidden=(16, 16), v_hidden=(16,))
    before = [p.copy() for p in m.params()]
    buf = make_buffer(rng, model=m)
    ppo_update(m, Adam(lr=0.0), buf, PpoConfig(minibatch_size=32, epochs=2), np.random.default_rng(0))
    assert all(np.array_equal(a, b) for a, b in zip(before, m.params()))


def test_update_changes_params_and_reports():
    rng = np.random.default_rng(9)
    m = ActorCritic.create(5, 3, rng, pi_hidden=(16,), v_hidden=(16,))
    buf = make_buffer(rng, model=m)
    stats = ppo_update(m, Adam(lr=1e-3), buf, PpoConfig(minibatch_size=32), np.random.default_rng(0))
    assert not stats["fault"]
    assert stats["approx_kl"] >= 0 and np.isfinite(stats["loss"])
    assert stats["approx_kl"] > 0


def test_update_is_deterministic():
    outs = []
    for _ in range(2):
        rng = np.random.default_rng(10)
        m = ActorCritic.create(5, 3, rng, pi_hidden=(16,), v_hidden=(16,))
        buf = make_buffer(rng, model=m)
        ppo_update(m, Adam(lr=1e-3), buf, PpoConfig(minibatch_size=32), np.random.default_rng(1))
        outs.append(m.params())
    assert all(np.array_equal(a, b) for a, b in zip(*outs))


def test_non_finite_update_rolls_back():
    rng = np.random.default_rng(11)
    m = ActorCritic.create(5, 3, rng, pi_hidden=(8,), v_hidden=(8,))
    before = [p.copy() for p in m.params()]
    buf = make_buffer(rng, model=m)
    buf.rewards[0, 0] = np.nan
    stats = ppo_update(m, Adam(lr=1e-3), buf, PpoConfig(minibatch_size=32), np.random.default_rng(0))
    assert stats["fault"]
    assert all(np.array_equal(a, b) for a, b in zip(before, m.params()))


def test_running_norm_matches_batch_statistics():
    rng = np.random.default_rng(12)
    x = rng.normal(2.0, 3.0, size=(5000, 4))
    n = RunningNorm(4)
    for chunk in np.array_split(x, 7):
        n.update(chunk)
    assert np.allclose(n.mean, x.mean(axis=0), atol=1e-9)
    assert np.allclose(n.var, x.var(axis=0), rtol=1e-6)
    assert np.abs(n(x * 100)).max() <= 5.0


def trained_pieces():
    rng = np.random.default_rng(13)
    m = ActorCritic.create(5, 3, rng, pi_hidden=(8,), v_hidden=(8,))
    m.norm.update(rng.normal(size=(100, 5)))
    opt = Adam(lr=2e-4)
    buf = make_buffer(rng, model=m)
    ppo_update(m, opt, buf, PpoConfig(minibatch_size=32), rng)
    return m, opt, rng


def test_checkpoint_round_trip(tmp_path):
    m, opt, rng = trained_pieces()
    cfg = PpoConfig(minibatch_size=32)
    path = save_checkpoint(tmp_path / "a.ckpt", m, opt=opt, cfg=cfg, rng=rng, extra={"updates": 3})
    got = load_checkpoint(path)
    assert all(np.array_equal(a, b) for a, b in zip(m.params(), got["model"].params()))
    assert np.array_equal(got["model"].norm.mean, m.norm.mean)
    assert got["opt"].t == opt.t and got["opt"].lr == opt.lr
    assert all(np.array_equal(a, b) for a, b in zip(opt.m, got["opt"].m))
    assert got["cfg"] == cfg
    assert got["extra"] == {"updates": 3}
    assert np.array_equal(got["rng"].random(5), rng.random(5))
    assert not list(tmp_path.glob("*.tmp"))


def test_checkpoint_corruption_detected():
    m, opt, rng = trained_pieces()
    blob = bytearray(encode(m, opt=opt))
    bad = bytes(blob[:-10]) + bytes([blob[-10] ^ 0xFF]) + bytes(blob[-9:])
    with pytest.raises(CheckpointError, match="checksum"):
        decode(bad)
    with pytest.raises(CheckpointError):
        decode(bytes(blob[:20]))
    with pytest.raises(CheckpointError, match="magic"):
        decode(b"X" + bytes(blob[1:]))
    with pytest.raises(CheckpointError, match="length"):
        decode(bytes(blob[:-1]))
    wrong_version = bytes(blob[:8]) + (2).to_bytes(4, "little") + bytes(blob[12:])
    with pytest.raises(CheckpointError, match="version"):
        decode(wrong_version)
