"""Desk-scale sim-to-real domain randomization benchmark for a 2-joint reaching arm."""

from .errors import (CheckpointError, ConfigError, NumericalError, ProtocolError, ProtocolMismatch,
                     S2RBError, ScheduleError, ShapeError)
from .robot import RobotGeometry, RobotState, JointLimits, forward_kinematics
from .env import EpisodeConfig, Mode, ReachEnv, TerminationCause
from .randomization import RandomizationConfig, RandomizedEnv, compose
from .baseline import solve_ik, baseline_policy
from .evaluation import EvalProtocol, EvalReport, PseudoRealConfig, evaluate, sim2real_gap, summarize
from .strategies import Budgets, StrategySchedule, TrainingSetup, build_schedule, run_strategy

__version__ = "0.1.0"
