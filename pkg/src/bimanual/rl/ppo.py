"""Clipped-surrogate PPO with GAE, Adam and a KL-driven learning rate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .networks import ActorCritic, gaussian_entropy, mlp_backward, mlp_forward


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.98
    lam: float = 0.95
    clip: float = 0.2
    minibatch_size: int = 512
    kl_threshold: float = 0.016
    epochs: int = 5
    entropy_coef: float = 0.0
    value_coef: float = 2.0
    lr: float = 3e-4
    max_grad_norm: float = 1.0
    adaptive_lr: bool = True

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ValueError("gamma and lambda must lie in (0, 1]")
        if self.clip <= 0:
            raise ValueError("clip range must be positive")
        if self.minibatch_size < 1 or self.epochs < 1:
            raise ValueError("minibatch size and epochs must be >= 1")


@dataclass
class RolloutBuffer:
    """M steps x N envs of transitions; ``values`` carries one extra bootstrap row."""

    obs: np.ndarray  # (M, N, D) normalized observations fed to the networks
    actions: np.ndarray  # (M, N, A) raw Gaussian samples
    log_probs: np.ndarray  # (M, N)
    rewards: np.ndarray  # (M, N)
    values: np.ndarray  # (M + 1, N)
    dones: np.ndarray  # (M, N)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @classmethod
    def empty(cls, M: int, N: int, obs_dim: int, act_dim: int, dtype=np.float32) -> RolloutBuffer:
        return cls(
            np.zeros((M, N, obs_dim), dtype=dtype), np.zeros((M, N, act_dim)), np.zeros((M, N)),
            np.zeros((M, N)), np.zeros((M + 1, N)), np.zeros((M, N)),
        )

    @property
    def size(self) -> int:
        return self.rewards.size

    def compute_advantages(self, gamma: float, lam: float) -> None:
        adv, ret = gae_advantages(self.rewards, self.values, self.dones, gamma, lam)
        self.advantages, self.returns = adv, ret


def gae_advantages(rewards, values, dones, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Backward recursion over time (axis 0); ``values`` has one more row than ``rewards``."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    notdone = 1.0 - np.asarray(dones, dtype=float)
    T = rewards.shape[0]
    if values.shape[0] != T + 1:
        raise ValueError("values need a bootstrap entry after the last step")
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1:])
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * values[t + 1] * notdone[t] - values[t]
        last = delta + gamma * lam * notdone[t] * last
        adv[t] = last
    return adv, adv + values[:-1]


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = np.asarray(adv, dtype=float)
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def approx_kl(log_ratio: np.ndarray) -> float:
    """Non-negative estimator E[(r - 1) - log r] of KL(old || new)."""
    log_ratio = np.asarray(log_ratio, dtype=float)
    return float(np.mean(np.expm1(log_ratio) - log_ratio))


def adaptive_lr(lr: float, kl: float, threshold: float, lo: float = 1e-6, hi: float = 1e-2) -> float:
    if kl > 2.0 * threshold:
        lr = lr / 1.5
    elif kl < 0.5 * threshold:
        lr = lr * 1.5
    return float(min(max(lr, lo), hi))


def clipped_objective(ratio, adv, clip: float) -> np.ndarray:
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)


def loss_and_grads(model: ActorCritic, obs_n, actions, old_log_probs, adv, returns, cfg: PpoConfig,
                   terms=("surrogate", "value", "entropy")):
    """Total loss of a minibatch and its gradient for every array in ``model.params()``.

    ``terms`` selects which parts enter, so each can be checked on its own.
    """
    B = obs_n.shape[0]
    dt = model.dtype
    log_std = model.log_std.astype(float)
    mean, pi_cache = mlp_forward(model.pi, obs_n, cache=True)
    mean = mean.astype(float)
    v, v_cache = mlp_forward(model.v, obs_n, cache=True)
    v = v[:, 0].astype(float)

    inv_var = np.exp(-2.0 * log_std)
    diff = actions - mean
    logp = -0.5 * np.sum(diff * diff * inv_var, axis=-1) - np.sum(log_std) - 0.5 * mean.shape[1] * np.log(2 * np.pi)
    log_ratio = logp - old_log_probs
    ratio = np.exp(log_ratio)

    parts = {}
    d_logp = np.zeros(B)
    d_logstd = np.zeros_like(log_std)
    d_v = np.zeros(B)
    if "surrogate" in terms:
        obj = clipped_objective(ratio, adv, cfg.clip)
        parts["surrogate"] = -float(np.mean(obj))
        active = ratio * adv <= np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv
        d_logp = -np.where(active, ratio * adv, 0.0) / B
    if "value" in terms:
        err = v - returns
        parts["value"] = cfg.value_coef * float(np.mean(err * err))
        d_v = 2.0 * cfg.value_coef * err / B
    if "entropy" in terms:
        parts["entropy"] = -cfg.entropy_coef * gaussian_entropy(log_std)
        d_logstd = d_logstd - cfg.entropy_coef

    d_mean = d_logp[:, None] * diff * inv_var
    d_logstd = d_logstd + np.sum(d_logp[:, None] * (diff * diff * inv_var - 1.0), axis=0)
    g_pi = mlp_backward(model.pi, pi_cache, d_mean.astype(dt))
    g_v = mlp_backward(model.v, v_cache, d_v[:, None].astype(dt))
    grads = []
    for gW, gb in g_pi:
        grads += [gW, gb]
    grads.append(d_logstd.astype(dt))
    for gW, gb in g_v:
        grads += [gW, gb]
    stats = {
        "loss": sum(parts.values()),
        "approx_kl": approx_kl(log_ratio),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > cfg.clip)),
        **parts,
    }
    return stats, grads


@dataclass
class Adam:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """In-place update of ``params``."""
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            step = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p -= step.astype(p.dtype, copy=False)


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=float))) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for g in grads:
            g *= scale
    return total


def ppo_update(model: ActorCritic, opt: Adam, buf: RolloutBuffer, cfg: PpoConfig,
               rng: np.random.Generator) -> dict:
    """Several epochs of minibatch PPO on ``buf``; parameters are updated in place.

    If any minibatch produces a non-finite loss or gradient the parameters are
    rolled back to their values before the update and ``fault`` is set.
    """
    if buf.advantages is None:
        buf.compute_advantages(cfg.gamma, cfg.lam)
    obs = buf.obs.reshape(-1, buf.obs.shape[-1])
    act = buf.actions.reshape(-1, buf.actions.shape[-1])
    old_lp = buf.log_probs.reshape(-1)
    adv = normalize_advantages(buf.advantages.reshape(-1))
    ret = buf.returns.reshape(-1)
    n = obs.shape[0]
    mb = min(cfg.minibatch_size, n)

    backup = [p.copy() for p in model.params()]
    totals: dict[str, float] = {}
    count = 0
    fault = False
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n - mb + 1, mb):
            idx = perm[start : start + mb]
            stats, grads = loss_and_grads(model, obs[idx], act[idx], old_lp[idx], adv[idx], ret[idx], cfg)
            if not np.isfinite(stats["loss"]) or not all(np.all(np.isfinite(g)) for g in grads):
                fault = True
                break
            # policy and value are clipped apart so large value errors do not shrink policy steps
            split = 2 * len(model.pi) + 1
            clip_grad_norm(grads[:split], cfg.max_grad_norm)
            clip_grad_norm(grads[split:], cfg.max_grad_norm)
            opt.step(model.params(), grads)
            model.clamp()
            for k, val in stats.items():
                totals[k] = totals.get(k, 0.0) + val
            count += 1
        if fault:
            break
    if fault:
        for p, b in zip(model.params(), backup):
            p[...] = b
    out = {k: val / max(count, 1) for k, val in totals.items()}
    # divergence of the final policy from the one that collected the data
    new_lp = model.log_prob_normalized(obs, act) if not fault else old_lp
    out["approx_kl"] = approx_kl(new_lp - old_lp)
    out["fault"] = fault
    out["lr"] = opt.lr
    return out
