"""Reach-and-balance episodic environment.

The agent observes ``[dx, dy, dz, q1, q2]`` (target minus end-effector, then
joint angles) and commands the two joint velocities. Each step is penalised by
the end-effector distance; an early terminal condition charges the distance
for every remaining step of the episode.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ProtocolError
from .robot import (
    DEFAULT_CLEARANCE,
    EVAL_LIMITS,
    MECHANICAL_LIMITS,
    JointLimits,
    RobotGeometry,
    RobotState,
    forward_kinematics,
)

OBS_DIM = 5
ACT_DIM = 2
REACH_TOLERANCE = 1e-6


class TerminationCause(str, Enum):
    NONE = "none"
    FLOOR_COLLISION = "floor_collision"
    JOINT_LIMIT = "joint_limit"
    HORIZON = "horizon"


class Mode(str, Enum):
    TRAINING = "training"
    EVALUATION = "evaluation"


@dataclass(frozen=True)
class EpisodeConfig:
    horizon: int = 250
    dt: float = 0.02
    max_speed: float = 1.0
    mode: Mode = Mode.TRAINING
    min_target_height: float = 0.10
    floor_clearance: float = DEFAULT_CLEARANCE

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.horizon <= 0 or self.dt <= 0 or self.max_speed <= 0:
            raise ConfigError(f"invalid episode config: {self}")
        if self.min_target_height < 0:
            raise ConfigError("min_target_height must be non-negative")


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terminated: bool
    termination_cause: TerminationCause


def sample_target(geom: RobotGeometry, min_height: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform point on the reachable sphere with ``z >= min_height``.

    The height of a uniform point on a sphere is itself uniform (Archimedes),
    so restricting it is equivalent to rejection sampling, without the loop.
    """
    d1, d2 = geom.base_height, geom.link_length
    if min_height >= d1 + d2:
        raise ConfigError(f"min_height {min_height} is above the reachable sphere")
    c_lo = max(-1.0, (min_height - d1) / d2)
    cz = rng.uniform(c_lo, 1.0)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    rho = d2 * math.sqrt(max(0.0, 1.0 - cz * cz))
    z = max(d1 + d2 * cz, min_height)
    return np.array([rho * math.cos(phi), rho * math.sin(phi), z])


def compute_reward(d: float, t: int, horizon: int, terminated_early: bool) -> float:
    if terminated_early:
        return -d * (horizon - t)
    return -d


def episode_return(rewards: Sequence[float]) -> float:
    return math.fsum(rewards)


class IdealDynamics:
    """The commanded velocity is reached instantaneously."""

    def reset(self, rng: np.random.Generator) -> None:
        pass

    def advance(self, state: RobotState, qd1: float, qd2: float, dt: float) -> None:
        state.qd1 = qd1
        state.qd2 = qd2
        state.q1 += dt * qd1
        state.q2 += dt * qd2


class ReachEnv:
    """One sequential episode runner. Not safe to share between threads."""

    def __init__(self, geometry: RobotGeometry = RobotGeometry(),
                 episode: EpisodeConfig = EpisodeConfig(),
                 safety_limits: JointLimits = EVAL_LIMITS,
                 mechanical_limits: JointLimits = MECHANICAL_LIMITS,
                 rng: Optional[np.random.Generator] = None):
        self.geometry = geometry
        self.episode = episode
        self.safety_limits = safety_limits
        self.mechanical_limits = mechanical_limits
        self.rng = rng
        self.dynamics = IdealDynamics()
        self.trace: Optional[EpisodeTrace] = None
        self.state = RobotState()
        self.target: Optional[np.ndarray] = None
        self.target_reachable = True
        self.t = 0
        self.done = True
        self.distance = float("nan")

    def reset(self, target=None, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        if rng is not None:
            self.rng = rng
        if target is None:
            if self.rng is None:
                raise ConfigError("environment has no generator to sample targets from")
            target = sample_target(self.geometry, self.episode.min_target_height, self.rng)
        self.target = np.array(target, dtype=float)
        if self.target.shape != (3,) or not np.all(np.isfinite(self.target)):
            raise ConfigError(f"target must be a finite 3-vector, got {target!r}")
        radius = float(np.linalg.norm(self.target - self.geometry.center))
        self.target_reachable = abs(radius - self.geometry.link_length) < REACH_TOLERANCE
        self.state = RobotState()
        self.t = 0
        self.done = False
        self.dynamics.reset(self.rng)
        obs = self.observe()
        self.distance = math.sqrt(obs[0] ** 2 + obs[1] ** 2 + obs[2] ** 2)
        return obs

    def observe(self) -> np.ndarray:
        g, s, tgt = self.geometry, self.state, self.target
        s2 = math.sin(s.q2)
        return np.array([
            tgt[0] - g.link_length * s2 * math.cos(s.q1),
            tgt[1] - g.link_length * s2 * math.sin(s.q1),
            tgt[2] - (g.base_height + g.link_length * math.cos(s.q2)),
            s.q1,
            s.q2,
        ])

    def step(self, action) -> StepResult:
        if self.done:
            raise ProtocolError("step() called on a terminated or un-reset episode")
        ep, s = self.episode, self.state
        vmax = ep.max_speed
        qd1 = min(max(float(action[0]), -vmax), vmax)
        qd2 = min(max(float(action[1]), -vmax), vmax)
        self.dynamics.advance(s, qd1, qd2, ep.dt)
        self._apply_hard_stops()
        self.t += 1

        obs = self.observe()
        d = math.sqrt(obs[0] ** 2 + obs[1] ** 2 + obs[2] ** 2)
        self.distance = d
        cause = TerminationCause.NONE
        if ep.mode is Mode.TRAINING:
            z = self.geometry.base_height + self.geometry.link_length * math.cos(s.q2)
            if z <= self.geometry.floor_z + ep.floor_clearance:
                cause = TerminationCause.FLOOR_COLLISION
        elif abs(s.q1) >= self.safety_limits.q1_max or abs(s.q2) >= self.safety_limits.q2_max:
            cause = TerminationCause.JOINT_LIMIT
        early = cause is not TerminationCause.NONE
        if not early and self.t >= ep.horizon:
            cause = TerminationCause.HORIZON
        reward = compute_reward(d, self.t, ep.horizon, early)
        self.done = cause is not TerminationCause.NONE
        result = StepResult(obs, reward, self.done, cause)
        if self.trace is not None:
            self.trace.record(self.t, s, obs, reward, cause)
        return result

    def _apply_hard_stops(self) -> None:
        s, lim = self.state, self.mechanical_limits
        if abs(s.q1) > lim.q1_max:
            s.q1 = math.copysign(lim.q1_max, s.q1)
            s.qd1 = 0.0
        if abs(s.q2) > lim.q2_max:
            s.q2 = math.copysign(lim.q2_max, s.q2)
            s.qd2 = 0.0

    def end_effector(self) -> np.ndarray:
        return forward_kinematics(self.geometry, self.state.q1, self.state.q2)


class EpisodeTrace:
    """Streams per-step rows to a CSV file object."""

    HEADER = ["step", "q1", "q2", "dx", "dy", "dz", "reward", "termination_cause"]

    def __init__(self, fh):
        self._writer = csv.writer(fh, lineterminator="\n")
        self._writer.writerow(self.HEADER)

    def record(self, t, state, obs, reward, cause) -> None:
        self._writer.writerow([t, repr(state.q1), repr(state.q2), repr(obs[0]), repr(obs[1]),
                               repr(obs[2]), repr(reward), cause.value])
