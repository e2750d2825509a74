"""Run configuration files (YAML) with strict validation and a stable hash.

Protocol-fixed quantities (clip range, environment count, rollout length, joint
speeds, horizons, joint limits) have no defaults here: a config file must
spell them out so any deviation shows up in a diff. Unknown keys are errors.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

from .env import EpisodeConfig, Mode
from .errors import ConfigError
from .evaluation import EvalProtocol, PseudoRealConfig
from .ppo.algorithm import TrainConfig
from .randomization import RandomizationConfig
from .robot import JointLimits, RobotGeometry
from .strategies import Budgets, StrategySchedule, TrainingSetup, build_schedule, stable_hash

EXPERIMENTS = {
    "exp1_1rad": {"horizon": 250, "max_speed": 1.0},
    "exp2_pi9": {"horizon": 500, "max_speed": math.pi / 9},
}

# section -> (allowed keys, required keys)
SCHEMA: Dict[str, Tuple[set, set]] = {
    "geometry": ({"base_height", "link_length", "floor_z"}, set()),
    "limits": ({"eval_q1_deg", "eval_q2_deg", "safety_margin_deg"},
               {"eval_q1_deg", "eval_q2_deg", "safety_margin_deg"}),
    "training_episode": ({"horizon", "dt", "max_speed", "min_target_height", "floor_clearance"},
                         {"horizon", "dt", "max_speed"}),
    "evaluation": ({"n_targets", "target_seed", "horizon", "dt", "max_speed", "min_target_height",
                    "target_margin_deg"}, {"n_targets", "horizon", "max_speed"}),
    "randomization": ({"latency_range", "stiffness_range", "damping_range", "noise_range"}, set()),
    "pseudo_real": ({"latency", "stiffness", "damping", "noise", "hidden_seed"}, set()),
    "train": ({"n_envs", "n_steps", "clip_range", "gamma", "gae_lambda", "learning_rate", "epochs",
               "minibatch_size", "value_coef", "entropy_coef", "max_grad_norm", "hidden",
               "log_std_init", "adam_eps", "normalize_reward", "reward_clip", "steps_semantics"},
              {"n_envs", "n_steps", "clip_range"}),
    "strategy": ({"name", "sequence", "budgets"}, {"name"}),
}
TOP_LEVEL = {"experiment", "measure_every", "seeds", "output_dir", *SCHEMA}
RUN_SELECTION = ("strategy", "seeds", "output_dir")

_PI_EXPR = re.compile(r"^\s*(?:([0-9.]+)\s*\*\s*)?pi\s*(?:/\s*([0-9.]+))?\s*$")


def _number(value, where: str) -> float:
    """Accept plain numbers or ``pi``, ``pi/9``, ``2*pi/3``."""
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _PI_EXPR.match(value)
        if m:
            return float(m.group(1) or 1.0) * math.pi / float(m.group(2) or 1.0)
    raise ConfigError(f"{where}: expected a number, got {value!r}")


def _section(raw: Mapping, name: str) -> Dict[str, Any]:
    allowed, required = SCHEMA[name]
    body = raw.get(name) or {}
    if not isinstance(body, Mapping):
        raise ConfigError(f"section {name!r} must be a mapping")
    unknown = set(body) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    missing = required - set(body)
    if missing:
        raise ConfigError(f"{name} must set {sorted(missing)} explicitly")
    return dict(body)


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    geometry: RobotGeometry
    eval_limits: JointLimits
    safety_margin: float
    training_episode: EpisodeConfig
    protocol: EvalProtocol
    randomization: RandomizationConfig
    pseudo_real: PseudoRealConfig
    train: TrainConfig
    strategy: str
    sequence: Optional[str]
    budgets: Budgets
    measure_every: int
    seeds: Tuple[int, ...]
    output_dir: str
    resolved: Dict[str, Any] = field(compare=False, repr=False, default_factory=dict)

    @property
    def mechanical_limits(self) -> JointLimits:
        return self.eval_limits.widened(self.safety_margin)

    @property
    def config_hash(self) -> str:
        """Digest of the experimental setup (run-selection keys excluded)."""
        return stable_hash({k: v for k, v in self.resolved.items() if k not in RUN_SELECTION})

    def setup(self) -> TrainingSetup:
        return TrainingSetup(geometry=self.geometry, episode=self.training_episode,
                             randomization=self.randomization, train=self.train,
                             protocol=self.protocol, measure_every=self.measure_every,
                             mechanical_limits=self.mechanical_limits)

    def schedule(self) -> StrategySchedule:
        return build_schedule(self.strategy, self.sequence, self.budgets)


def _set_dotted(raw: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = raw
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override {dotted}: {k} is not a section")
    node[keys[-1]] = value


def apply_overrides(raw: dict, overrides: Mapping[str, Any]) -> dict:
    """Apply ``{"train.learning_rate": 1e-3, "experiment": "exp2_pi9", ...}``.

    Switching ``experiment`` also rewrites the training horizon and speed to
    that experiment's values.
    """
    raw = yaml.safe_load(yaml.safe_dump(raw))  # deep copy through plain types
    for key, value in overrides.items():
        if key == "experiment":
            if value not in EXPERIMENTS:
                raise ConfigError(f"unknown experiment {value!r}; expected {sorted(EXPERIMENTS)}")
            raw["experiment"] = value
            raw.setdefault("training_episode", {}).update(EXPERIMENTS[value])
        else:
            _set_dotted(raw, key, value)
    return raw


def parse_config(raw: Mapping) -> RunConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("configuration must be a mapping")
    unknown = set(raw) - TOP_LEVEL
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    experiment = raw.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {sorted(EXPERIMENTS)}, got {experiment!r}")

    g = _section(raw, "geometry")
    geometry = RobotGeometry(**{k: _number(v, f"geometry.{k}") for k, v in g.items()})

    lim = _section(raw, "limits")
    eval_limits = JointLimits.from_degrees(_number(lim["eval_q1_deg"], "limits.eval_q1_deg"),
                                           _number(lim["eval_q2_deg"], "limits.eval_q2_deg"))
    margin = math.radians(_number(lim["safety_margin_deg"], "limits.safety_margin_deg"))

    te = _section(raw, "training_episode")
    episode = EpisodeConfig(
        horizon=int(te["horizon"]), dt=_number(te["dt"], "training_episode.dt"),
        max_speed=_number(te["max_speed"], "training_episode.max_speed"), mode=Mode.TRAINING,
        min_target_height=_number(te.get("min_target_height", 0.10), "training_episode.min_target_height"),
        floor_clearance=_number(te.get("floor_clearance", 0.01), "training_episode.floor_clearance"))
    preset = EXPERIMENTS[experiment]
    if episode.horizon != preset["horizon"] or not math.isclose(episode.max_speed, preset["max_speed"]):
        raise ConfigError(f"training_episode (horizon {episode.horizon}, max_speed {episode.max_speed}) "
                          f"disagrees with experiment {experiment} {preset}")

    ev = _section(raw, "evaluation")
    protocol = EvalProtocol(
        n_targets=int(ev["n_targets"]), target_seed=int(ev.get("target_seed", 2022)),
        horizon=int(ev["horizon"]), max_speed=_number(ev["max_speed"], "evaluation.max_speed"),
        limits=eval_limits, dt=_number(ev.get("dt", 0.02), "evaluation.dt"),
        min_target_height=_number(ev.get("min_target_height", 0.10), "evaluation.min_target_height"),
        target_margin=math.radians(_number(ev.get("target_margin_deg", 2.0), "evaluation.target_margin_deg")))

    randomization = RandomizationConfig(**_section(raw, "randomization"))
    pr = _section(raw, "pseudo_real")
    pseudo_real = PseudoRealConfig(**{k: (int(v) if k == "hidden_seed" else _number(v, f"pseudo_real.{k}"))
                                      for k, v in pr.items()})

    tr = _section(raw, "train")
    try:
        train = TrainConfig(**tr)
    except TypeError as exc:
        raise ConfigError(f"train: {exc}") from None

    st = _section(raw, "strategy")
    b = st.get("budgets") or {}
    if not isinstance(b, Mapping) or set(b) - {"pretrain", "adapt_total", "per_phase"}:
        raise ConfigError("strategy.budgets takes pretrain, adapt_total and per_phase")
    default = Budgets.scaled(0.01)
    budgets = Budgets(int(b.get("pretrain", default.pretrain)), int(b.get("adapt_total", default.adapt_total)),
                      int(b.get("per_phase", default.per_phase)))
    sequence = st.get("sequence")
    sequence = None if sequence in (None, "", "N/A") else str(sequence)

    seeds = raw.get("seeds", [0, 1, 2, 3, 4])
    if isinstance(seeds, int):
        seeds = [seeds]
    if not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError(f"seeds must be a non-empty list of non-negative integers, got {seeds!r}")
    measure_every = int(raw.get("measure_every", 10_000))
    if measure_every <= 0:
        raise ConfigError("measure_every must be positive")

    cfg = RunConfig(
        experiment=experiment, geometry=geometry, eval_limits=eval_limits, safety_margin=margin,
        training_episode=episode, protocol=protocol, randomization=randomization,
        pseudo_real=pseudo_real, train=train, strategy=str(st["name"]), sequence=sequence,
        budgets=budgets, measure_every=measure_every, seeds=tuple(seeds),
        output_dir=str(raw.get("output_dir", "runs")))
    cfg.schedule()  # surface schedule errors at load time
    resolved = {
        "experiment": experiment,
        "geometry": asdict(geometry),
        "limits": {"eval_q1": eval_limits.q1_max, "eval_q2": eval_limits.q2_max, "safety_margin": margin},
        "training_episode": asdict(episode),
        "evaluation": asdict(protocol),
        "randomization": {k: v for k, v in asdict(randomization).items() if k.endswith("_range")},
        "pseudo_real": asdict(pseudo_real),
        "train": {k: v for k, v in asdict(train).items() if k not in ("total_timesteps", "seed")},
        "measure_every": measure_every,
        "strategy": {"name": cfg.strategy, "sequence": sequence, "budgets": asdict(budgets)},
        "seeds": list(seeds),
        "output_dir": cfg.output_dir,
    }
    return replace(cfg, resolved=resolved)


def load_config(path, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from None
    if overrides:
        raw = apply_overrides(raw or {}, overrides)
    return parse_config(raw or {})


DEFAULT_CONFIG = """\
# Desk-scale reproduction of the 1 rad/s experiment.
experiment: exp1_1rad
geometry:
  base_height: 0.36
  link_length: 0.946
  floor_z: 0.0
limits:
  eval_q1_deg: 150
  eval_q2_deg: 100
  safety_margin_deg: 20
training_episode:
  horizon: 250
  dt: 0.02
  max_speed: 1.0
  min_target_height: 0.10
  floor_clearance: 0.01
evaluation:
  n_targets: 50
  target_seed: 2022
  horizon: 500
  dt: 0.02
  max_speed: pi/9
  min_target_height: 0.10
  target_margin_deg: 2.0
randomization:
  latency_range: [0.0, 1.0]
  stiffness_range: [1.0, 100.0]
  damping_range: [1.0, 100.0]
  noise_range: [0.0, 0.10]
pseudo_real:
  latency: 0.12
  stiffness: 40.0
  damping: 25.0
  noise: 0.02
  hidden_seed: 7212022
train:
  n_envs: 64
  n_steps: 256
  # desk-scale: 256 steps per update shared by all 64 environments
  steps_semantics: total
  clip_range: 0.1
  gamma: 0.95
  gae_lambda: 0.9
  learning_rate: 3.0e-4
  epochs: 10
  minibatch_size: 64
  value_coef: 0.5
  entropy_coef: 0.0
  max_grad_norm: 0.5
  hidden: [64, 64]
  log_std_init: -1.0
  normalize_reward: true
  reward_clip: 10.0
strategy:
  name: ideal
  sequence: null
  budgets: {pretrain: 310000, adapt_total: 90000, per_phase: 30000}
measure_every: 10000
seeds: [0, 1, 2, 3, 4]
output_dir: runs/exp1
"""
