"""Fixed-topology MLPs with hand-written reverse mode, and the actor-critic pair."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
LOG_2PI = math.log(2.0 * math.pi)


# branch-free forms: np.where over a random sign mask is several times slower
def elu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.expm1(np.minimum(x, 0.0))


def elu_grad(x: np.ndarray) -> np.ndarray:
    return np.exp(np.minimum(x, 0.0)).astype(x.dtype, copy=False)


# a network is a list of (W, b) with W of shape (fan_in, fan_out)
Mlp = list


def orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    a = rng.normal(size=(max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return gain * q[:fan_in, :fan_out]


def init_mlp(sizes, rng: np.random.Generator, hidden_gain: float = math.sqrt(2.0), out_gain: float = 1.0,
             dtype=np.float32) -> Mlp:
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = out_gain if i == len(sizes) - 2 else hidden_gain
        layers.append((orthogonal(rng, n_in, n_out, gain).astype(dtype), np.zeros(n_out, dtype=dtype)))
    return layers


def mlp_forward(params: Mlp, x: np.ndarray, cache: bool = False):
    """ELU between hidden layers, linear head. With ``cache`` also returns what backprop needs."""
    if x.shape[-1] != params[0][0].shape[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match network input {params[0][0].shape[0]}")
    h = x
    inputs, pre = [], []
    for i, (W, b) in enumerate(params):
        inputs.append(h)
        z = h @ W + b
        if i == len(params) - 1:
            h = z
        else:
            pre.append(z)
            h = elu(z)
    return (h, (inputs, pre)) if cache else h


def mlp_backward(params: Mlp, cache, grad_out: np.ndarray, need_input: bool = False):
    """Gradients of a scalar loss w.r.t. every (W, b), given dLoss/dOutput.

    With ``need_input`` the gradient w.r.t. the network input is returned as well.
    """
    inputs, pre = cache
    grads = [None] * len(params)
    g = grad_out
    for i in range(len(params) - 1, -1, -1):
        W, _ = params[i]
        grads[i] = (inputs[i].T @ g, g.sum(axis=0))
        if i:
            g = (g @ W.T) * elu_grad(pre[i - 1])
    if need_input:
        return grads, g @ params[0][0].T
    return grads


class RunningNorm:
    """Running mean and variance of observations (parallel-merge update)."""

    def __init__(self, dim: int, clip: float = 5.0, eps: float = 1e-8):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = eps
        self.clip = clip

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=float).reshape(-1, self.mean.shape[0])
        b_mean, b_var, n = x.mean(axis=0), x.var(axis=0), x.shape[0]
        delta = b_mean - self.mean
        tot = self.count + n
        self.mean = self.mean + delta * n / tot
        m2 = self.var * self.count + b_var * n + delta**2 * self.count * n / tot
        self.var = m2 / tot
        self.count = tot

    def __call__(self, x: np.ndarray, dtype=np.float32) -> np.ndarray:
        z = (np.asarray(x, dtype=float) - self.mean) / np.sqrt(self.var + 1e-8)
        return np.clip(z, -self.clip, self.clip).astype(dtype)

    def state(self) -> dict[str, np.ndarray]:
        return {"mean": self.mean, "var": self.var, "count": np.array(self.count), "clip": np.array(self.clip)}

    @classmethod
    def from_state(cls, st: dict) -> RunningNorm:
        out = cls(st["mean"].shape[0], float(st["clip"]))
        out.mean, out.var, out.count = st["mean"].copy(), st["var"].copy(), float(st["count"])
        return out


def gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray) -> np.ndarray:
    z = (action - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * mean.shape[-1] * LOG_2PI


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std) + 0.5 * log_std.shape[-1] * (1.0 + LOG_2PI))


@dataclass
class ActorCritic:
    """Diagonal-Gaussian policy with a state-independent log std, plus a value network."""

    pi: Mlp
    log_std: np.ndarray
    v: Mlp
    norm: RunningNorm
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, rng: np.random.Generator,
               pi_hidden=(256, 256, 128), v_hidden=(512, 512, 512), dtype=np.float32,
               init_log_std: float = 0.0) -> ActorCritic:
        pi = init_mlp((obs_dim, *pi_hidden, act_dim), rng, out_gain=0.01, dtype=dtype)
        v = init_mlp((obs_dim, *v_hidden, 1), rng, out_gain=1.0, dtype=dtype)
        return cls(pi, np.full(act_dim, init_log_std, dtype=dtype), v, RunningNorm(obs_dim),
                   {"pi_hidden": list(pi_hidden), "v_hidden": list(v_hidden)})

    @property
    def obs_dim(self) -> int:
        return self.pi[0][0].shape[0]

    @property
    def act_dim(self) -> int:
        return self.pi[-1][0].shape[1]

    @property
    def dtype(self):
        return self.pi[0][0].dtype

    def params(self) -> list[np.ndarray]:
        """Flat list of trainable arrays (fixed order shared with gradients)."""
        out = []
        for W, b in self.pi:
            out += [W, b]
        out.append(self.log_std)
        for W, b in self.v:
            out += [W, b]
        return out

    def set_params(self, flat: list[np.ndarray]) -> None:
        it = iter(flat)
        self.pi = [(next(it), next(it)) for _ in self.pi]
        self.log_std = next(it)
        self.v = [(next(it), next(it)) for _ in self.v]

    def clamp(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        return self.norm(obs, self.dtype)

    def mean_action(self, obs_n: np.ndarray) -> np.ndarray:
        return mlp_forward(self.pi, obs_n)

    def value(self, obs_n: np.ndarray) -> np.ndarray:
        return mlp_forward(self.v, obs_n)[..., 0]

    def act(self, obs: np.ndarray, rng: np.random.Generator, deterministic: bool = False):
        """(raw action, log prob, value) for raw observations."""
        x = self.normalize(obs)
        mean = self.mean_action(x).astype(float)
        if deterministic:
            a = mean
        else:
            a = mean + np.exp(self.log_std.astype(float)) * rng.standard_normal(mean.shape)
        return a, gaussian_log_prob(mean, self.log_std.astype(float), a), self.value(x).astype(float)

    def log_prob(self, obs: np.ndarray, action: np.ndarray) -> np.ndarray:
        mean = self.mean_action(self.normalize(obs)).astype(float)
        return gaussian_log_prob(mean, self.log_std.astype(float), action)

    def log_prob_normalized(self, obs_n: np.ndarray, action: np.ndarray) -> np.ndarray:
        mean = self.mean_action(obs_n).astype(float)
        return gaussian_log_prob(mean, self.log_std.astype(float), action)

    def copy(self) -> ActorCritic:
        return ActorCritic(
            [(W.copy(), b.copy()) for W, b in self.pi], self.log_std.copy(),
            [(W.copy(), b.copy()) for W, b in self.v], RunningNorm.from_state(self.norm.state()), dict(self.meta),
        )
