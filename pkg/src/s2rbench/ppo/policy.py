"""Actor-critic MLPs with hand-written reverse-mode gradients.

Actor and critic are separate tanh MLPs. The actor outputs the mean of a
diagonal Gaussian whose log standard deviation is a free, state-independent
parameter vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from ..env import ACT_DIM, OBS_DIM
from ..errors import ShapeError

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
LOG_2PI = math.log(2.0 * math.pi)

Layer = Tuple[np.ndarray, np.ndarray]


@dataclass
class PolicyParameters:
    actor: List[Layer]
    log_std: np.ndarray
    critic: List[Layer]

    def arrays(self) -> List[np.ndarray]:
        """Flat view of every parameter array, in a fixed order."""
        out = []
        for w, b in self.actor:
            out += [w, b]
        out.append(self.log_std)
        for w, b in self.critic:
            out += [w, b]
        return out

    def copy(self) -> PolicyParameters:
        return PolicyParameters([(w.copy(), b.copy()) for w, b in self.actor], self.log_std.copy(),
                                [(w.copy(), b.copy()) for w, b in self.critic])

    def like(self, arrays: Sequence[np.ndarray]) -> PolicyParameters:
        """Rebuild with the same structure from a flat list (e.g. gradients)."""
        it = iter(arrays)
        actor = [(next(it), next(it)) for _ in self.actor]
        log_std = next(it)
        critic = [(next(it), next(it)) for _ in self.critic]
        return PolicyParameters(actor, log_std, critic)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def validate(self) -> None:
        for name, layers, out_dim in (("actor", self.actor, ACT_DIM), ("critic", self.critic, 1)):
            if not layers:
                raise ShapeError(f"{name} has no layers")
            fan_in = OBS_DIM
            for i, (w, b) in enumerate(layers):
                if w.ndim != 2 or w.shape[0] != fan_in or b.shape != (w.shape[1],):
                    raise ShapeError(f"{name} layer {i}: weight {w.shape}, bias {b.shape}, "
                                     f"expected input width {fan_in}")
                fan_in = w.shape[1]
            if fan_in != out_dim:
                raise ShapeError(f"{name} output width {fan_in}, expected {out_dim}")
        if self.log_std.shape != (ACT_DIM,):
            raise ShapeError(f"log_std shape {self.log_std.shape}")


def _orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return gain * q[:fan_in, :fan_out]


def init_params(rng: np.random.Generator, hidden: Sequence[int] = (64, 64),
                log_std_init: float = 0.0) -> PolicyParameters:
    def mlp(out_dim, out_gain):
        sizes = [OBS_DIM, *hidden, out_dim]
        layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = out_gain if i == len(sizes) - 2 else math.sqrt(2.0)
            layers.append((_orthogonal(rng, a, b, gain), np.zeros(b)))
        return layers

    actor = mlp(ACT_DIM, 0.01)
    critic = mlp(1, 1.0)
    return PolicyParameters(actor, np.full(ACT_DIM, float(log_std_init)), critic)


def zeros_like(params: PolicyParameters) -> PolicyParameters:
    return params.like([np.zeros_like(a) for a in params.arrays()])


def _mlp_forward(layers: List[Layer], x: np.ndarray):
    acts = [x]
    for w, b in layers[:-1]:
        x = np.tanh(x @ w + b)
        acts.append(x)
    w, b = layers[-1]
    return x @ w + b, acts


def _mlp_backward(layers: List[Layer], acts, grad_out: np.ndarray) -> List[Layer]:
    grads = [None] * len(layers)
    g = grad_out
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        x = acts[i]
        grads[i] = (x.T @ g, g.sum(axis=0))
        if i:
            g = (g @ w.T) * (1.0 - x * x)
    return grads


def policy_forward(params: PolicyParameters, obs: np.ndarray):
    """Return ``(mean, log_std, value)``; accepts one observation or a batch."""
    obs = np.asarray(obs, dtype=float)
    single = obs.ndim == 1
    x = obs[None, :] if single else obs
    if x.shape[-1] != OBS_DIM:
        raise ShapeError(f"observation width {x.shape[-1]}, expected {OBS_DIM}")
    try:
        mean, _ = _mlp_forward(params.actor, x)
        value, _ = _mlp_forward(params.critic, x)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    value = value[:, 0]
    if single:
        return mean[0], params.log_std.copy(), float(value[0])
    return mean, params.log_std.copy(), value


def gaussian_log_prob(actions: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (actions - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * len(log_std) * LOG_2PI


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std) + 0.5 * len(log_std) * (1.0 + LOG_2PI))


def sample_action(mean: np.ndarray, log_std: np.ndarray, rng: np.random.Generator):
    """Draw from N(mean, diag(exp(log_std))^2); returns ``(action, log_prob)``."""
    mean = np.asarray(mean, dtype=float)
    noise = rng.standard_normal(mean.shape)
    action = mean + np.exp(log_std) * noise
    log_prob = -0.5 * np.sum(noise * noise, axis=-1) - np.sum(log_std) - 0.5 * len(log_std) * LOG_2PI
    return action, log_prob


@dataclass
class LossTerms:
    total: float
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float


def ppo_loss_and_grad(params: PolicyParameters, obs, actions, old_log_prob, advantages, returns,
                      clip_range: float, value_coef: float, entropy_coef: float):
    """Full PPO loss (to minimise) and its gradient w.r.t. every parameter.

    loss = -mean(min(r*A, clip(r)*A)) + value_coef*mean((V-R)^2) - entropy_coef*H
    """
    n = obs.shape[0]
    mean, a_acts = _mlp_forward(params.actor, obs)
    value, c_acts = _mlp_forward(params.critic, obs)
    value = value[:, 0]
    log_std = params.log_std
    inv_std = np.exp(-log_std)
    z = (actions - mean) * inv_std
    log_prob = -0.5 * np.sum(z * z, axis=1) - np.sum(log_std) - 0.5 * len(log_std) * LOG_2PI

    ratio = np.exp(log_prob - old_log_prob)
    clipped = np.clip(ratio, 1.0 - clip_range, 1.0 + clip_range)
    unclipped_obj = ratio * advantages
    clipped_obj = clipped * advantages
    use_unclipped = unclipped_obj <= clipped_obj
    surrogate = np.where(use_unclipped, unclipped_obj, clipped_obj)
    policy_loss = -surrogate.mean()
    value_err = value - returns
    value_loss = float(np.mean(value_err * value_err))
    entropy = gaussian_entropy(log_std)
    total = policy_loss + value_coef * value_loss - entropy_coef * entropy

    # d loss / d log_prob
    g_logp = -np.where(use_unclipped, advantages, 0.0) * ratio / n
    g_mean = g_logp[:, None] * z * inv_std
    g_log_std = (g_logp[:, None] * (z * z - 1.0)).sum(axis=0) - entropy_coef
    g_value = (2.0 * value_coef / n) * value_err

    actor_grads = _mlp_backward(params.actor, a_acts, g_mean)
    critic_grads = _mlp_backward(params.critic, c_acts, g_value[:, None])
    grads = PolicyParameters(actor_grads, g_log_std, critic_grads)

    log_ratio = log_prob - old_log_prob
    terms = LossTerms(
        total=float(total),
        policy_loss=float(policy_loss),
        value_loss=value_loss,
        entropy=entropy,
        clip_fraction=float(np.mean(np.abs(ratio - 1.0) > clip_range)),
        approx_kl=float(np.mean((ratio - 1.0) - log_ratio)),
    )
    return terms, grads
