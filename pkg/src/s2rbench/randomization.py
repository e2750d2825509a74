"""Latency, torque and noise randomization around :class:`ReachEnv`.

Per step the wrapped environment applies, in order: multiplicative noise on
the action, torque-drive (or ideal) integration inside the bare environment,
recording of the ideal observation, latency interpolation, and noise on the
observation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .env import ReachEnv, StepResult
from .errors import ConfigError
from .robot import RobotState

Range = Tuple[float, float]


def _check_range(name: str, rng_: Range) -> Range:
    try:
        lo, hi = (float(v) for v in rng_)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a [lo, hi] pair, got {rng_!r}") from None
    if not (0.0 <= lo <= hi) or not math.isfinite(hi):
        raise ConfigError(f"{name} must satisfy 0 <= lo <= hi, got {rng_!r}")
    return lo, hi


@dataclass(frozen=True)
class RandomizationConfig:
    latency_enabled: bool = False
    latency_range: Range = (0.0, 1.0)
    torque_enabled: bool = False
    stiffness_range: Range = (1.0, 100.0)
    damping_range: Range = (1.0, 100.0)
    noise_enabled: bool = False
    noise_range: Range = (0.0, 0.10)

    def __post_init__(self):
        for name in ("latency_range", "stiffness_range", "damping_range", "noise_range"):
            object.__setattr__(self, name, _check_range(name, getattr(self, name)))

    @classmethod
    def from_params(cls, params, base: Optional[RandomizationConfig] = None) -> RandomizationConfig:
        """Enable exactly the parameters named in ``params`` (letters L, T, N)."""
        base = base or cls()
        params = set(params)
        unknown = params - {"L", "T", "N"}
        if unknown:
            raise ConfigError(f"unknown randomization parameters {sorted(unknown)}")
        return replace(base, latency_enabled="L" in params, torque_enabled="T" in params,
                       noise_enabled="N" in params)

    @property
    def active(self) -> frozenset:
        return frozenset(p for p, on in (("L", self.latency_enabled), ("T", self.torque_enabled),
                                         ("N", self.noise_enabled)) if on)


# ---------------------------------------------------------------- latency

@dataclass
class LatencyState:
    history: list = field(default_factory=list)
    prev_time: float = 0.0
    prev_output: Optional[np.ndarray] = None


def apply_latency(state: LatencyState, t: int, latency: float, dt: float) -> np.ndarray:
    """Latency-affected observation at step ``t`` from the ideal history.

    ``state.history[k]`` is the ideal observation after step ``k``. The
    effective time never moves backwards within an episode.
    """
    t_eff = max(0.0, t - latency / dt)
    if state.prev_output is not None and t_eff < state.prev_time:
        return state.prev_output
    lo = int(math.floor(t_eff))
    hi = min(lo + 1, t)
    frac = t_eff - lo
    a = state.history[lo]
    out = a if frac == 0.0 else a + frac * (state.history[hi] - a)
    state.prev_time = t_eff
    state.prev_output = out
    return out


# ---------------------------------------------------------------- torque

@dataclass
class TorqueParams:
    stiffness: float
    damping: float
    q_cmd1: float = 0.0
    q_cmd2: float = 0.0


def draw_episode_params(config: RandomizationConfig, rng: np.random.Generator) -> TorqueParams:
    if not config.torque_enabled:
        raise ConfigError("torque randomization is disabled; no episode parameters to draw")
    return TorqueParams(stiffness=float(rng.uniform(*config.stiffness_range)),
                        damping=float(rng.uniform(*config.damping_range)))


def _drive(q, qd, q_cmd, qd_cmd, ks, kd, dt):
    # spring term explicit, damping term implicit: stable for kd*dt >= 2
    qd = (qd + dt * (ks * (q_cmd - q) + kd * qd_cmd)) / (1.0 + dt * kd)
    return q + dt * qd, qd


def step_torque_dynamics(params: TorqueParams, state: RobotState, action, dt: float) -> RobotState:
    """Advance a unit-inertia spring-damper joint drive by one step.

    ``params`` carries the integrated command and is updated in place.
    """
    params.q_cmd1 += dt * action[0]
    params.q_cmd2 += dt * action[1]
    q1, qd1 = _drive(state.q1, state.qd1, params.q_cmd1, action[0], params.stiffness, params.damping, dt)
    q2, qd2 = _drive(state.q2, state.qd2, params.q_cmd2, action[1], params.stiffness, params.damping, dt)
    return RobotState(q1, q2, qd1, qd2)


class TorqueDynamics:
    """Drop-in replacement for :class:`IdealDynamics` with per-episode gains."""

    def __init__(self, config: RandomizationConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        self.params: Optional[TorqueParams] = None

    def reset(self, _env_rng) -> None:
        self.params = draw_episode_params(self.config, self.rng)

    def advance(self, state: RobotState, qd1: float, qd2: float, dt: float) -> None:
        new = step_torque_dynamics(self.params, state, (qd1, qd2), dt)
        state.q1, state.q2, state.qd1, state.qd2 = new.q1, new.q2, new.qd1, new.qd2


# ---------------------------------------------------------------- noise

def apply_noise(values, level: float, rng: np.random.Generator) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if level == 0.0:
        return values
    return values * (1.0 + rng.uniform(-level, level, size=values.shape))


# ---------------------------------------------------------------- composition

class RandomizedEnv:
    """Same reset/step interface as :class:`ReachEnv`.

    With every flag off the wrapper only forwards calls and never touches its
    generator, so trajectories are bit-identical to the bare environment.
    """

    def __init__(self, env: ReachEnv, config: RandomizationConfig, rng: np.random.Generator):
        self.env = env
        self.config = config
        self.rng = rng
        self.latency: Optional[LatencyState] = None
        self.effective_times: list = []
        if config.torque_enabled:
            env.dynamics = TorqueDynamics(config, rng)

    def __getattr__(self, name):
        return getattr(self.env, name)

    def reset(self, target=None, rng=None) -> np.ndarray:
        obs = self.env.reset(target, rng)
        if self.config.latency_enabled:
            self.latency = LatencyState(history=[obs], prev_time=0.0, prev_output=obs)
            self.effective_times = [0.0]
        return self._observe_noise(obs)

    def step(self, action) -> StepResult:
        cfg = self.config
        if cfg.noise_enabled:
            action = apply_noise(action, self.rng.uniform(*cfg.noise_range), self.rng)
        result = self.env.step(action)
        if not (cfg.latency_enabled or cfg.noise_enabled):
            return result
        obs = result.observation
        if cfg.latency_enabled:
            lat = self.latency
            lat.history.append(obs)
            obs = apply_latency(lat, self.env.t, self.rng.uniform(*cfg.latency_range),
                                self.env.episode.dt)
            self.effective_times.append(lat.prev_time)
        obs = self._observe_noise(obs)
        return StepResult(obs, result.reward, result.terminated, result.termination_cause)

    def _observe_noise(self, obs: np.ndarray) -> np.ndarray:
        if not self.config.noise_enabled:
            return obs
        return apply_noise(obs, self.rng.uniform(*self.config.noise_range), self.rng)


def compose(env: ReachEnv, config: RandomizationConfig,
            rng: Optional[np.random.Generator] = None) -> RandomizedEnv:
    if not isinstance(config, RandomizationConfig):
        raise ConfigError(f"expected RandomizationConfig, got {type(config).__name__}")
    if rng is None:
        rng = np.random.default_rng()
    return RandomizedEnv(env, config, rng)
