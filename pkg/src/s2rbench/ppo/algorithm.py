"""PPO training: rollouts over parallel environments, GAE, clipped updates."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..env import ACT_DIM, OBS_DIM, TerminationCause
from ..errors import ConfigError, NumericalError
from .policy import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    PolicyParameters,
    init_params,
    policy_forward,
    ppo_loss_and_grad,
    sample_action,
)

log = logging.getLogger(__name__)

ADV_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    n_envs: int = 64
    n_steps: int = 256
    clip_range: float = 0.1
    gamma: float = 0.99
    gae_lambda: float = 0.9
    learning_rate: float = 3e-4
    epochs: int = 10
    minibatch_size: int = 64
    total_timesteps: int = 0
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    seed: int = 0
    hidden: Tuple[int, ...] = (64, 64)
    log_std_init: float = 0.0
    adam_eps: float = 1e-5
    # divide rewards by a running std of the discounted return
    normalize_reward: bool = True
    reward_clip: float = 10.0
    # "per_env": n_steps per environment; "total": n_steps shared by all environments
    steps_semantics: str = "per_env"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0 < self.clip_range < 1:
            raise ConfigError("clip_range must lie in (0, 1)")
        if not 0 < self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ConfigError("gamma must lie in (0, 1] and gae_lambda in [0, 1]")
        if self.n_envs <= 0 or self.n_steps <= 0 or self.epochs <= 0 or self.minibatch_size <= 0:
            raise ConfigError("n_envs, n_steps, epochs and minibatch_size must be positive")
        if self.steps_semantics not in ("per_env", "total"):
            raise ConfigError(f"unknown steps_semantics {self.steps_semantics!r}")
        if self.steps_semantics == "total" and self.n_steps % self.n_envs:
            raise ConfigError("n_steps must be a multiple of n_envs when shared across environments")
        if self.rollout_size % self.minibatch_size:
            raise ConfigError(f"rollout size {self.rollout_size} is not divisible by "
                              f"minibatch_size {self.minibatch_size}")
        if self.total_timesteps < 0 or self.learning_rate <= 0 or self.max_grad_norm <= 0:
            raise ConfigError("invalid total_timesteps, learning_rate or max_grad_norm")

    @property
    def steps_per_env(self) -> int:
        return self.n_steps if self.steps_semantics == "per_env" else self.n_steps // self.n_envs

    @property
    def rollout_size(self) -> int:
        return self.n_envs * self.steps_per_env


# ---------------------------------------------------------------- pure pieces

def compute_gae(rewards, values, terminals, bootstrap_value, gamma: float, lam: float):
    """Generalised advantage estimates along the leading (time) axis.

    Works for shape ``(T,)`` or ``(T, n_envs)``; ``terminals[t]`` marks that
    the episode ended at step ``t`` so nothing is bootstrapped past it.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    not_done = 1.0 - np.asarray(terminals, dtype=float)
    adv = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=float)
    last = np.zeros_like(next_value)
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * next_value * not_done[t] - values[t]
        last = delta + gamma * lam * not_done[t] * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


def clipped_surrogate(ratio, advantage, clip_range: float):
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    return np.minimum(ratio * advantage,
                      np.clip(ratio, 1.0 - clip_range, 1.0 + clip_range) * advantage)


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + ADV_EPS)


def clip_grad_norm(grads: List[np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for g in grads:
            g *= scale
    return norm


class Adam:
    """Bias-corrected first/second-moment gradient descent over a list of arrays."""

    def __init__(self, params: List[np.ndarray], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: List[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class ReturnScaler:
    """Running variance of per-environment discounted returns (Welford, batched)."""

    def __init__(self, n_envs: int, gamma: float, clip: float, eps: float = 1e-8):
        self.gamma, self.clip, self.eps = gamma, clip, eps
        self.ret = np.zeros(n_envs)
        self.mean, self.var, self.count = 0.0, 1.0, 1e-4

    def __call__(self, rewards: np.ndarray, terminals: np.ndarray) -> np.ndarray:
        self.ret = self.ret * self.gamma + rewards
        m, v, n = float(self.ret.mean()), float(self.ret.var()), len(self.ret)
        delta, total = m - self.mean, self.count + n
        self.mean += delta * n / total
        self.var = (self.var * self.count + v * n + delta * delta * self.count * n / total) / total
        self.count = total
        self.ret[terminals > 0] = 0.0
        return np.clip(rewards / math.sqrt(self.var + self.eps), -self.clip, self.clip)


# ---------------------------------------------------------------- buffer / update

@dataclass
class RolloutBuffer:
    n_steps: int
    n_envs: int
    obs: np.ndarray = field(init=False)
    actions: np.ndarray = field(init=False)
    log_probs: np.ndarray = field(init=False)
    rewards: np.ndarray = field(init=False)
    values: np.ndarray = field(init=False)
    terminals: np.ndarray = field(init=False)
    bootstrap_values: Optional[np.ndarray] = None
    pos: int = 0

    def __post_init__(self):
        shape = (self.n_steps, self.n_envs)
        self.obs = np.zeros(shape + (OBS_DIM,))
        self.actions = np.zeros(shape + (ACT_DIM,))
        self.log_probs = np.zeros(shape)
        self.rewards = np.zeros(shape)
        self.values = np.zeros(shape)
        self.terminals = np.zeros(shape)

    @property
    def full(self) -> bool:
        return self.pos == self.n_steps and self.bootstrap_values is not None

    def add(self, obs, actions, log_probs, rewards, values, terminals) -> None:
        i = self.pos
        self.obs[i], self.actions[i], self.log_probs[i] = obs, actions, log_probs
        self.rewards[i], self.values[i], self.terminals[i] = rewards, values, terminals
        self.pos += 1

    def clear(self) -> None:
        self.pos = 0
        self.bootstrap_values = None


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float
    grad_norm: float


def ppo_update(params: PolicyParameters, buffer: RolloutBuffer, cfg: TrainConfig,
               rng: np.random.Generator, optimizer: Optional[Adam] = None):
    """Run ``cfg.epochs`` passes of clipped-surrogate minibatch descent.

    ``params`` is updated in place (through ``optimizer``, which must wrap
    ``params.arrays()``) and returned with the averaged stats. If any
    parameter turns non-finite, the pre-update values are restored and
    :class:`NumericalError` is raised.
    """
    if not buffer.full:
        raise ConfigError("rollout buffer is not fully populated")
    if optimizer is None:
        optimizer = Adam(params.arrays(), cfg.learning_rate, eps=cfg.adam_eps)
    backup = [a.copy() for a in params.arrays()]

    adv, returns = compute_gae(buffer.rewards, buffer.values, buffer.terminals,
                               buffer.bootstrap_values, cfg.gamma, cfg.gae_lambda)
    n = buffer.n_steps * buffer.n_envs
    obs = buffer.obs.reshape(n, OBS_DIM)
    actions = buffer.actions.reshape(n, ACT_DIM)
    old_logp = buffer.log_probs.reshape(n)
    adv = normalize_advantages(adv.reshape(n))
    returns = returns.reshape(n)

    mb = min(cfg.minibatch_size, n)
    sums = np.zeros(6)
    count = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            idx = order[start:start + mb]
            terms, grads = ppo_loss_and_grad(params, obs[idx], actions[idx], old_logp[idx],
                                             adv[idx], returns[idx], cfg.clip_range,
                                             cfg.value_coef, cfg.entropy_coef)
            g = grads.arrays()
            gnorm = clip_grad_norm(g, cfg.max_grad_norm)
            optimizer.step(g)
            np.clip(params.log_std, LOG_STD_MIN, LOG_STD_MAX, out=params.log_std)
            sums += (terms.policy_loss, terms.value_loss, terms.entropy, terms.clip_fraction,
                     terms.approx_kl, gnorm)
            count += 1
    if not params.all_finite():
        for a, b in zip(params.arrays(), backup):
            a[...] = b
        raise NumericalError("non-finite parameters after PPO update; update reverted")
    return params, UpdateStats(*(sums / max(count, 1)))


# ---------------------------------------------------------------- training loop

@dataclass
class ProgressRecord:
    update_index: int
    timesteps: int
    mean_return: float
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    termination_counts: dict


@dataclass
class TrainResult:
    params: PolicyParameters
    timesteps: int
    curve: List[Tuple[int, float]]
    progress: List[ProgressRecord]


EnvFactory = Callable[[np.random.SeedSequence], object]
Measure = Callable[[PolicyParameters], float]


def train_loop(make_env: EnvFactory, cfg: TrainConfig, init: Optional[PolicyParameters] = None,
               progress: Optional[Callable[[ProgressRecord], None]] = None,
               measure: Optional[Measure] = None, measure_every: int = 10_000,
               timestep_offset: int = 0, measure_initial: bool = True) -> TrainResult:
    """Alternate rollout collection and PPO updates until the budget is spent.

    Every environment gets its own child seed, so buffers are reproducible for
    a fixed ``n_envs``. ``measure`` is called on the untrained policy and then
    at the first update boundary past each multiple of ``measure_every``;
    curve x-values include ``timestep_offset`` so phases can be chained.
    """
    root = np.random.SeedSequence(cfg.seed)
    init_seq, act_seq, shuffle_seq, env_root = root.spawn(4)
    params = init.copy() if init is not None else init_params(
        np.random.default_rng(init_seq), cfg.hidden, cfg.log_std_init)
    params.validate()
    curve: List[Tuple[int, float]] = []
    records: List[ProgressRecord] = []
    if cfg.total_timesteps == 0:
        if measure is not None and measure_initial:
            curve.append((timestep_offset, measure(params)))
        return TrainResult(params, 0, curve, records)

    act_rng = np.random.default_rng(act_seq)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    envs = [make_env(s) for s in env_root.spawn(cfg.n_envs)]
    obs = np.stack([env.reset() for env in envs])
    optimizer = Adam(params.arrays(), cfg.learning_rate, eps=cfg.adam_eps)
    ep_returns = np.zeros(cfg.n_envs)
    scaler = ReturnScaler(cfg.n_envs, cfg.gamma, cfg.reward_clip) if cfg.normalize_reward else None

    if measure is not None and measure_initial:
        curve.append((timestep_offset, measure(params)))
    next_measure = measure_every

    done_steps = 0
    update = 0
    while done_steps < cfg.total_timesteps:
        remaining = cfg.total_timesteps - done_steps
        n_steps = min(cfg.steps_per_env, -(-remaining // cfg.n_envs))
        n_steps = _fit_minibatch(n_steps, cfg)
        buffer = RolloutBuffer(n_steps, cfg.n_envs)
        finished_returns = []
        causes = Counter()
        for _ in range(n_steps):
            mean, log_std, values = policy_forward(params, obs)
            actions, log_probs = sample_action(mean, log_std, act_rng)
            rewards = np.empty(cfg.n_envs)
            terminals = np.zeros(cfg.n_envs)
            next_obs = np.empty_like(obs)
            truncated = []
            for i, env in enumerate(envs):
                res = env.step(actions[i])
                rewards[i] = res.reward
                next_obs[i] = res.observation
                if res.terminated:
                    terminals[i] = 1.0
                    ep_returns[i] += res.reward
                    finished_returns.append(ep_returns[i])
                    ep_returns[i] = 0.0
                    causes[res.termination_cause.value] += 1
                    if res.termination_cause is TerminationCause.HORIZON:
                        truncated.append((i, res.observation))
                    next_obs[i] = env.reset()
                else:
                    ep_returns[i] += res.reward
            train_rewards = scaler(rewards, terminals) if scaler is not None else rewards.copy()
            if truncated:
                # time limits are not observable: bootstrap through them
                idx = [i for i, _ in truncated]
                _, _, tail_values = policy_forward(params, np.stack([o for _, o in truncated]))
                train_rewards[idx] += cfg.gamma * tail_values
            buffer.add(obs, actions, log_probs, train_rewards, values, terminals)
            obs = next_obs
        _, _, buffer.bootstrap_values = policy_forward(params, obs)
        done_steps += n_steps * cfg.n_envs

        params, stats = ppo_update(params, buffer, cfg, shuffle_rng, optimizer)
        buffer.clear()
        update += 1
        rec = ProgressRecord(
            update_index=update,
            timesteps=timestep_offset + done_steps,
            mean_return=float(np.mean(finished_returns)) if finished_returns else float("nan"),
            policy_loss=stats.policy_loss,
            value_loss=stats.value_loss,
            entropy=stats.entropy,
            clip_fraction=stats.clip_fraction,
            termination_counts=dict(sorted(causes.items())),
        )
        records.append(rec)
        if progress is not None:
            progress(rec)
        log.debug("update %d: %s", update, rec)
        if measure is not None and (done_steps >= next_measure or done_steps >= cfg.total_timesteps):
            curve.append((timestep_offset + done_steps, measure(params)))
            while next_measure <= done_steps:
                next_measure += measure_every
    return TrainResult(params, done_steps, curve, records)


def _fit_minibatch(n_steps: int, cfg: TrainConfig) -> int:
    """Round a short final rollout up so the buffer splits into whole minibatches."""
    size = n_steps * cfg.n_envs
    if size % cfg.minibatch_size == 0:
        return n_steps
    step = cfg.minibatch_size // math.gcd(cfg.minibatch_size, cfg.n_envs)
    return -(-n_steps // step) * step
