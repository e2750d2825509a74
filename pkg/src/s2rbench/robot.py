"""Kinematics and limit checks for the two-joint reach manipulator.

Joint 1 yaws about the vertical axis, joint 2 pitches the straight arm away
from upright. Joints 3-7 of the physical arm are frozen at zero, so the
end-effector always lies on a sphere of radius ``link_length`` centred on the
joint-2 axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

DEFAULT_CLEARANCE = 0.01


@dataclass(frozen=True)
class RobotGeometry:
    base_height: float = 0.36
    link_length: float = 0.946
    floor_z: float = 0.0

    def __post_init__(self):
        if not (self.base_height > 0 and self.link_length > 0):
            raise ConfigError("base_height and link_length must be positive")
        if self.base_height + self.link_length <= 0.1:
            raise ConfigError("geometry leaves no targets above 10 cm")

    @property
    def center(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.base_height])

    @property
    def home_position(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.base_height + self.link_length])


@dataclass
class RobotState:
    q1: float = 0.0
    q2: float = 0.0
    qd1: float = 0.0
    qd2: float = 0.0


@dataclass(frozen=True)
class JointLimits:
    q1_max: float
    q2_max: float

    def __post_init__(self):
        if not (0 < self.q1_max <= math.pi and 0 < self.q2_max <= math.pi):
            raise ConfigError(f"joint limits must lie in (0, pi]: {self}")

    @classmethod
    def from_degrees(cls, q1_deg: float, q2_deg: float) -> JointLimits:
        return cls(math.radians(q1_deg), math.radians(q2_deg))

    def widened(self, margin: float) -> JointLimits:
        return JointLimits(min(self.q1_max + margin, math.pi), min(self.q2_max + margin, math.pi))


SAFETY_MARGIN = math.radians(20.0)
EVAL_LIMITS = JointLimits.from_degrees(150.0, 100.0)
MECHANICAL_LIMITS = EVAL_LIMITS.widened(SAFETY_MARGIN)


def forward_kinematics(geom: RobotGeometry, q1: float, q2: float) -> np.ndarray:
    s2 = math.sin(q2)
    return np.array([
        geom.link_length * s2 * math.cos(q1),
        geom.link_length * s2 * math.sin(q1),
        geom.base_height + geom.link_length * math.cos(q2),
    ])


def end_effector_height(geom: RobotGeometry, q2: float) -> float:
    return geom.base_height + geom.link_length * math.cos(q2)


def floor_collision(geom: RobotGeometry, q1: float, q2: float,
                    clearance: float = DEFAULT_CLEARANCE) -> bool:
    # q1 does not move the end-effector vertically
    return end_effector_height(geom, q2) <= geom.floor_z + clearance


def joint_safety_violation(limits: JointLimits, q1: float, q2: float) -> bool:
    return abs(q1) >= limits.q1_max or abs(q2) >= limits.q2_max


def clamp_joint_speed(action, max_speed: float) -> np.ndarray:
    if max_speed <= 0:
        raise ConfigError("max_speed must be positive")
    return np.clip(np.asarray(action, dtype=float), -max_speed, max_speed)


def angle_diff(a: float, b: float) -> float:
    """Signed shortest rotation from ``b`` to ``a``, in [-pi, pi)."""
    return (a - b + math.pi) % (2.0 * math.pi) - math.pi
