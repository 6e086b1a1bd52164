"""Independent reference computations shared by the unit and acceptance suites."""

from __future__ import annotations

import numpy as np

from bimanual.rl import ActorCritic, PpoConfig, gae_advantages, loss_and_grads


def gae_brute_force(rewards, values, dones, gamma, lam):
    """A_t as the explicit masked sum over l of (gamma*lam)^l * delta_{t+l}."""
    T = rewards.shape[0]
    notdone = 1.0 - dones
    delta = rewards + gamma * values[1:] * notdone - values[:-1]
    adv = np.zeros_like(rewards)
    for t in range(T):
        weight = np.ones(rewards.shape[1:])
        for l in range(T - t):
            adv[t] += weight * delta[t + l]
            weight = weight * gamma * lam * notdone[t + l]
    return adv


def gae_max_error(draws: int = 1000, max_len: int = 10, seed: int = 0) -> float:
    """Worst deviation between the recursion and the brute-force sum.

    Every done-mask of every length up to ``max_len`` is paired with ``draws``
    independent reward/value draws.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for T in range(1, max_len + 1):
        masks = ((np.arange(2**T)[None, :] >> np.arange(T)[:, None]) & 1).astype(float)
        dones = np.tile(masks, (1, draws))
        n = dones.shape[1]
        rewards = rng.normal(size=(T, n))
        values = rng.normal(size=(T + 1, n))
        gamma, lam = rng.uniform(0.5, 1.0, 2)
        adv, ret = gae_advantages(rewards, values, dones, gamma, lam)
        want = gae_brute_force(rewards, values, dones, gamma, lam)
        worst = max(worst, float(np.abs(adv - want).max()), float(np.abs(ret - (want + values[:-1])).max()))
    return worst


def mlp_oracle(params, x):
    """Layer-by-layer loop over samples and units, written without the package helpers."""
    out = []
    for row in x:
        h = list(row)
        for i, (W, b) in enumerate(params):
            z = [sum(h[j] * W[j, k] for j in range(W.shape[0])) + b[k] for k in range(W.shape[1])]
            if i < len(params) - 1:
                z = [v if v > 0 else np.expm1(v) for v in z]
            h = z
        out.append(h)
    return np.array(out)


GRAD_TERMS = ("surrogate", "value", "entropy")


def _grad_case(rng):
    model = ActorCritic.create(4, 2, rng, pi_hidden=(2,), v_hidden=(2,), dtype=np.float64)
    for p in model.params():
        p[...] = rng.normal(scale=0.7, size=p.shape)
    model.log_std[...] = rng.uniform(-1.0, 0.5, 2)
    B = 16
    obs = rng.normal(size=(B, 4))
    mean = model.mean_action(obs)
    actions = mean + np.exp(model.log_std) * rng.normal(size=(B, 2))
    logp = model.log_prob_normalized(obs, actions)
    # old policy slightly different so some ratios are clipped
    old = logp + rng.normal(scale=0.3, size=B)
    adv = rng.normal(size=B)
    ret = rng.normal(size=B)
    return model, obs, actions, old, adv, ret


def grad_check_errors(points: int = 100, seed: int = 0, h: float = 1e-5) -> dict[str, float]:
    """Max relative error of backprop against central differences, per loss term."""
    rng = np.random.default_rng(seed)
    cfg = PpoConfig(entropy_coef=0.05)
    worst = {t: 0.0 for t in GRAD_TERMS}
    done = 0
    while done < points:
        model, obs, act, old, adv, ret = _grad_case(rng)
        ratio = np.exp(model.log_prob_normalized(obs, act) - old)
        # finite differences straddling a clip kink are not a valid oracle
        if np.min(np.abs(np.abs(ratio - 1.0) - cfg.clip)) < 1e-3:
            continue
        done += 1
        for term in GRAD_TERMS:
            _, grads = loss_and_grads(model, obs, act, old, adv, ret, cfg, terms=(term,))
            for p, g in zip(model.params(), grads):
                num = np.zeros_like(p)
                for idx in np.ndindex(p.shape):
                    keep = p[idx]
                    p[idx] = keep + h
                    up = loss_and_grads(model, obs, act, old, adv, ret, cfg, terms=(term,))[0][term]
                    p[idx] = keep - h
                    dn = loss_and_grads(model, obs, act, old, adv, ret, cfg, terms=(term,))[0][term]
                    p[idx] = keep
                    num[idx] = (up - dn) / (2 * h)
                scale = np.maximum(np.abs(num) + np.abs(g), 1e-6)
                worst[term] = max(worst[term], float((np.abs(num - g) / scale).max()))
    return worst
