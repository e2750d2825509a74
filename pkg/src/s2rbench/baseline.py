"""Analytic inverse-kinematics baseline and a uniform random reference agent."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .robot import RobotGeometry, RobotState, angle_diff

DEFAULT_GAIN = 5.0


@dataclass(frozen=True)
class IkSolution:
    q1_star: float
    q2_star: float
    reachable: bool


def solve_ik(geom: RobotGeometry, target) -> IkSolution:
    """Joint angles putting the end-effector on ``target`` (or the nearest sphere point).

    Always returns the ``q2 >= 0`` branch.
    """
    x, y, z = (float(v) for v in target)
    rel = np.array([x, y, z - geom.base_height])
    radius = float(np.linalg.norm(rel))
    reachable = abs(radius - geom.link_length) < 1e-6
    if radius > 0.0:
        # project before arccos so unreachable targets map to the nearest sphere point
        c = rel[2] / radius
    else:
        c = 1.0
    q2 = math.acos(min(1.0, max(-1.0, c)))
    q1 = 0.0 if x == 0.0 and y == 0.0 else math.atan2(y, x)
    return IkSolution(q1, q2, reachable)


def baseline_policy(solution: IkSolution, state: RobotState, max_speed: float, dt: float,
                    gain: float = DEFAULT_GAIN) -> np.ndarray:
    """Saturated proportional command that lands exactly once the error is within one step."""
    out = np.empty(2)
    for i, (goal, q) in enumerate(((solution.q1_star, state.q1), (solution.q2_star, state.q2))):
        err = angle_diff(goal, q)
        if abs(err) <= dt * max_speed:
            out[i] = err / dt
        else:
            out[i] = min(max(gain * err, -max_speed), max_speed)
    return out


def random_policy(rng: np.random.Generator, max_speed: float, size=None) -> np.ndarray:
    shape = (2,) if size is None else (size, 2)
    return rng.uniform(-max_speed, max_speed, size=shape)
