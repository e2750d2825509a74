"""Offline range search for one randomization parameter.

Starting from a zero-width range, the range is widened one step at a time and
the ideal-trained agent is evaluated under that single randomization. The
search stops at the first width whose degradation exceeds the tolerance and
reports the widest range that stayed within it.

Degradation is measured relative to the random agent:
``(R_randomized - R_ideal) / |R_ideal - R_random|``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

from .errors import ConfigError
from .evaluation import RANDOMIZED, SIM, EvalProtocol, RandomController, evaluate
from .randomization import RandomizationConfig
from .robot import RobotGeometry

LATENCY_STEP = 0.05
NOISE_STEP = 0.01
GAIN_STEP = 5.0
GAIN_TOP = 100.0
GAIN_FLOOR = 1.0


def degradation(r_randomized: float, r_ideal: float, r_random: float) -> float:
    scale = abs(r_ideal - r_random)
    if scale == 0.0:
        raise ConfigError("ideal and random agents score the same; degradation is undefined")
    return (r_randomized - r_ideal) / scale


def sweep_range(parameter: str, k: int) -> Optional[Tuple[float, float]]:
    """Range after ``k`` widening steps; ``None`` means the zero-width (disabled) start."""
    if k == 0:
        return None
    if parameter == "L":
        return (0.0, k * LATENCY_STEP)
    if parameter == "N":
        return (0.0, k * NOISE_STEP)
    if parameter == "T":
        return (max(GAIN_TOP - k * GAIN_STEP, GAIN_FLOOR), GAIN_TOP)
    raise ConfigError(f"unknown randomization parameter {parameter!r}; expected L, T or N")


def single_parameter_config(parameter: str, rng_: Tuple[float, float]) -> RandomizationConfig:
    if parameter == "L":
        return RandomizationConfig(latency_enabled=True, latency_range=rng_)
    if parameter == "N":
        return RandomizationConfig(noise_enabled=True, noise_range=rng_)
    return RandomizationConfig(torque_enabled=True, stiffness_range=rng_, damping_range=rng_)


@dataclass
class SweepPoint:
    width_step: int
    range: Optional[Tuple[float, float]]
    mean_return: float
    degradation: float
    passed: bool


@dataclass
class CalibrationResult:
    parameter: str
    r_ideal: float
    r_random: float
    widest: Optional[Tuple[float, float]]
    points: List[SweepPoint] = field(default_factory=list)

    @property
    def exhausted(self) -> bool:
        """True when the sweep hit its step cap without ever failing."""
        return bool(self.points) and self.points[-1].passed


def calibrate(policy, parameter: str, protocol: EvalProtocol = EvalProtocol(),
              geometry: RobotGeometry = RobotGeometry(), tolerance: float = 0.10,
              max_steps: int = 40, env_seed: int = 0) -> CalibrationResult:
    if parameter not in ("L", "T", "N"):
        raise ConfigError(f"unknown randomization parameter {parameter!r}; expected L, T or N")
    if parameter == "T":
        max_steps = min(max_steps, int((GAIN_TOP - GAIN_FLOOR) // GAIN_STEP) + 1)
    r_ideal = evaluate(policy, SIM, protocol, geometry).mean_return
    r_random = evaluate(RandomController(env_seed), SIM, protocol, geometry).mean_return
    result = CalibrationResult(parameter, r_ideal, r_random, None,
                               [SweepPoint(0, None, r_ideal, 0.0, True)])
    for k in range(1, max_steps + 1):
        rng_ = sweep_range(parameter, k)
        rand = single_parameter_config(parameter, rng_)
        ret = evaluate(policy, RANDOMIZED, protocol, geometry, randomization=rand,
                       env_seed=env_seed).mean_return
        deg = degradation(ret, r_ideal, r_random)
        passed = deg >= -tolerance
        result.points.append(SweepPoint(k, rng_, ret, deg, passed))
        if not passed:
            break
        result.widest = rng_
    return result
