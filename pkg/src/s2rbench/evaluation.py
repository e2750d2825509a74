"""Fixed-target evaluation in ideal simulation and on the pseudo-real surrogate.

The pseudo-real environment is the randomized environment with every
parameter frozen to one interior value of the training ranges. It stands in
for the physical robot so the transfer gap becomes a reproducible number.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .baseline import IkSolution, baseline_policy, random_policy, solve_ik
from .env import EpisodeConfig, Mode, ReachEnv, TerminationCause, sample_target
from .errors import CheckpointError, ConfigError, ProtocolMismatch
from .ppo.policy import PolicyParameters, policy_forward
from .randomization import RandomizationConfig, compose
from .robot import EVAL_LIMITS, JointLimits, RobotGeometry, RobotState

SIM = "sim"
PSEUDO_REAL = "pseudo_real"
RANDOMIZED = "randomized"
ENV_KINDS = (SIM, PSEUDO_REAL)

STRATEGY_ORDER = ("ideal", "fine_tuning", "curriculum", "ideal2randomized", "randomized", "ik_baseline")
SEQUENCE_ORDER = ("TNL", "TLN", "NTL", "NLT", "LTN", "LNT")


@dataclass(frozen=True)
class EvalProtocol:
    n_targets: int = 50
    target_seed: int = 2022
    horizon: int = 500
    max_speed: float = math.pi / 9
    limits: JointLimits = EVAL_LIMITS
    dt: float = 0.02
    min_target_height: float = 0.10
    # targets whose IK solution lies within this margin of a safety limit are redrawn
    target_margin: float = math.radians(2.0)

    def __post_init__(self):
        if self.n_targets <= 0 or self.horizon <= 0 or self.max_speed <= 0 or self.dt <= 0:
            raise ConfigError(f"invalid evaluation protocol: {self}")

    @property
    def episode(self) -> EpisodeConfig:
        return EpisodeConfig(horizon=self.horizon, dt=self.dt, max_speed=self.max_speed,
                             mode=Mode.EVALUATION, min_target_height=self.min_target_height)


@dataclass(frozen=True)
class PseudoRealConfig:
    latency: float = 0.12
    stiffness: float = 40.0
    damping: float = 25.0
    noise: float = 0.02
    hidden_seed: int = 7_212_022

    def randomization(self) -> RandomizationConfig:
        """Degenerate ranges pinned to the frozen values; zeros switch a parameter off."""
        return RandomizationConfig(
            latency_enabled=self.latency > 0, latency_range=(self.latency, self.latency),
            torque_enabled=self.stiffness > 0 or self.damping > 0,
            stiffness_range=(self.stiffness, self.stiffness),
            damping_range=(self.damping, self.damping),
            noise_enabled=self.noise > 0, noise_range=(self.noise, self.noise),
        )


def evaluation_targets(geom: RobotGeometry, protocol: EvalProtocol) -> np.ndarray:
    """The fixed target list, a pure function of ``target_seed`` and geometry.

    Candidates are drawn like training targets; any whose IK configuration
    would sit within ``target_margin`` of a safety limit is redrawn, since no
    controller could hold it without terminating.
    """
    rng = np.random.default_rng(protocol.target_seed)
    lim = protocol.limits
    out = []
    for _ in range(1000 * protocol.n_targets):
        p = sample_target(geom, protocol.min_target_height, rng)
        sol = solve_ik(geom, p)
        if abs(sol.q1_star) < lim.q1_max - protocol.target_margin and \
                abs(sol.q2_star) < lim.q2_max - protocol.target_margin:
            out.append(p)
            if len(out) == protocol.n_targets:
                return np.array(out)
    raise ConfigError("could not draw evaluation targets inside the safety limits")


# ---------------------------------------------------------------- controllers

class Controller:
    """Batched action rule for lock-step evaluation episodes."""

    name = "controller"

    def begin(self, targets: np.ndarray, protocol: EvalProtocol, geom: RobotGeometry) -> None:
        pass

    def act(self, obs: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class PolicyController(Controller):
    """Deterministic use of a trained policy: the Gaussian mean, never a sample."""

    name = "policy"

    def __init__(self, params: PolicyParameters):
        params.validate()
        self.params = params

    def act(self, obs):
        mean, _, _ = policy_forward(self.params, obs)
        return mean


class IkController(Controller):
    name = "ik_baseline"

    def __init__(self, gain: float = 5.0):
        self.gain = gain
        self.solutions: List[IkSolution] = []

    def begin(self, targets, protocol, geom):
        self.solutions = [solve_ik(geom, t) for t in targets]
        self.max_speed, self.dt = protocol.max_speed, protocol.dt

    def act(self, obs):
        # joint readings come from the (possibly degraded) observation
        return np.stack([
            baseline_policy(sol, RobotState(o[3], o[4]), self.max_speed, self.dt, self.gain)
            for sol, o in zip(self.solutions, obs)])


class RandomController(Controller):
    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def begin(self, targets, protocol, geom):
        self.rng = np.random.default_rng(self.seed)
        self.max_speed = protocol.max_speed

    def act(self, obs):
        return random_policy(self.rng, self.max_speed, size=len(obs))


class ZeroController(Controller):
    name = "zero"

    def act(self, obs):
        return np.zeros((len(obs), 2))


# ---------------------------------------------------------------- reports

@dataclass
class EpisodeRecord:
    target_index: int
    target: np.ndarray
    episode_return: float
    final_distance: float
    termination_cause: str


@dataclass
class EvalReport:
    episodes: List[EpisodeRecord]
    env_kind: str
    strategy: str = ""
    sequence: str = ""
    seed: int = -1
    config_hash: str = ""

    @property
    def returns(self) -> np.ndarray:
        return np.array([e.episode_return for e in self.episodes])

    @property
    def mean_return(self) -> float:
        return math.fsum(e.episode_return for e in self.episodes) / len(self.episodes)

    @property
    def std_return(self) -> float:
        return float(np.std(self.returns))

    @property
    def cause_counts(self) -> Counter:
        return Counter(e.termination_cause for e in self.episodes)

    @property
    def pct_joint_limit(self) -> float:
        return 100.0 * self.cause_counts[TerminationCause.JOINT_LIMIT.value] / len(self.episodes)

    def targets(self) -> np.ndarray:
        return np.array([e.target for e in self.episodes])


CSV_COLUMNS = ["target_index", "tx", "ty", "tz", "return", "final_distance_m", "termination_cause",
               "env_kind", "strategy", "sequence", "seed", "config_hash"]


def report_to_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for e in report.episodes:
        w.writerow([e.target_index, *(repr(float(v)) for v in e.target), repr(e.episode_return),
                    repr(e.final_distance), e.termination_cause, report.env_kind, report.strategy,
                    report.sequence, report.seed, report.config_hash])
    return buf.getvalue()


def report_from_csv(text: str) -> EvalReport:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise CheckpointError("empty evaluation report")
    missing = set(CSV_COLUMNS) - set(rows[0])
    if missing:
        raise CheckpointError(f"report is missing columns {sorted(missing)}")
    first = rows[0]
    episodes = [EpisodeRecord(int(r["target_index"]), np.array([float(r["tx"]), float(r["ty"]), float(r["tz"])]),
                              float(r["return"]), float(r["final_distance_m"]), r["termination_cause"])
                for r in rows]
    return EvalReport(episodes, first["env_kind"], first["strategy"], first["sequence"],
                      int(first["seed"]), first["config_hash"])


# ---------------------------------------------------------------- evaluation

def make_eval_env(geom: RobotGeometry, protocol: EvalProtocol, randomization: Optional[RandomizationConfig],
                  env_seed: int, index: int):
    env = ReachEnv(geom, protocol.episode, protocol.limits, protocol.limits.widened(math.radians(20.0)))
    if randomization is None:
        return env
    seq = np.random.SeedSequence([env_seed, index])
    return compose(env, randomization, np.random.default_rng(seq))


def evaluate(policy, env_kind: str, protocol: EvalProtocol = EvalProtocol(),
             geometry: RobotGeometry = RobotGeometry(),
             pseudo_real: PseudoRealConfig = PseudoRealConfig(),
             strategy: str = "", sequence: str = "", seed: int = -1,
             config_hash: str = "", randomization: Optional[RandomizationConfig] = None,
             env_seed: int = 0) -> EvalReport:
    """One episode per fixed target, all episodes stepped in lock-step.

    ``env_kind`` is ``sim`` (ideal), ``pseudo_real`` (frozen surrogate), or
    ``randomized`` with an explicit ``randomization`` config.
    """
    if env_kind == SIM:
        randomization = None
    elif env_kind == PSEUDO_REAL:
        randomization, env_seed = pseudo_real.randomization(), pseudo_real.hidden_seed
    elif env_kind != RANDOMIZED or randomization is None:
        raise ConfigError(f"unknown env_kind {env_kind!r} (randomized needs a config)")
    if isinstance(policy, PolicyParameters):
        controller = PolicyController(policy)
    elif isinstance(policy, Controller):
        controller = policy
    else:
        raise CheckpointError(f"cannot evaluate object of type {type(policy).__name__}")
    targets = evaluation_targets(geometry, protocol)
    envs = [make_eval_env(geometry, protocol, randomization, env_seed, i) for i in range(len(targets))]
    obs = np.stack([env.reset(t) for env, t in zip(envs, targets)])
    controller.begin(targets, protocol, geometry)
    returns = [[] for _ in envs]
    causes = [TerminationCause.NONE.value] * len(envs)
    active = list(range(len(envs)))
    while active:
        actions = controller.act(obs[active])
        still = []
        for k, i in enumerate(active):
            res = envs[i].step(actions[k])
            returns[i].append(res.reward)
            obs[i] = res.observation
            if res.terminated:
                causes[i] = res.termination_cause.value
            else:
                still.append(i)
        active = still
    episodes = [EpisodeRecord(i, targets[i], math.fsum(returns[i]), envs[i].distance, causes[i])
                for i in range(len(envs))]
    return EvalReport(episodes, env_kind, strategy, sequence, seed, config_hash)


def sim2real_gap(sim: EvalReport, real: EvalReport) -> float:
    """Signed drop in mean return from ``sim`` to ``real``; positive means degradation."""
    if len(sim.episodes) != len(real.episodes) or not np.array_equal(sim.targets(), real.targets()):
        raise ProtocolMismatch("reports were produced on different target sets")
    if (sim.strategy, sim.sequence, sim.seed) != (real.strategy, real.sequence, real.seed):
        raise ProtocolMismatch("reports belong to different policies")
    return sim.mean_return - real.mean_return


# ---------------------------------------------------------------- summary

@dataclass
class SummaryRow:
    strategy: str
    sequence: str
    avg_sim: float
    std_sim: float
    best_sim: float
    best_pseudo_real: float
    gap: float
    pct_joint_limit: float
    n_seeds: int
    config_hash: str = ""


SUMMARY_COLUMNS = ["strategy", "sequence", "avg_sim", "std_sim", "best_sim", "best_pseudo_real",
                   "gap", "pct_joint_limit", "n_seeds", "config_hash"]


def _row_key(row: SummaryRow):
    s = STRATEGY_ORDER.index(row.strategy) if row.strategy in STRATEGY_ORDER else len(STRATEGY_ORDER)
    q = row.sequence
    q_rank = -1 if q in ("", "all") else (SEQUENCE_ORDER.index(q) if q in SEQUENCE_ORDER else 99)
    return s, row.strategy, q_rank, q


def _summarize_group(strategy: str, sequence: str, reports: Sequence[EvalReport]) -> SummaryRow:
    sims: Dict[tuple, EvalReport] = {}
    reals: Dict[tuple, EvalReport] = {}
    for r in reports:
        (sims if r.env_kind == SIM else reals)[(r.sequence, r.seed)] = r
    nan = float("nan")
    sim_means = [sims[k].mean_return for k in sorted(sims)]
    avg = math.fsum(sim_means) / len(sim_means) if sim_means else nan
    std = statistics.pstdev(sim_means) if sim_means else nan
    best_key = max(sims, key=lambda k: (sims[k].mean_return, k)) if sims else None
    best_sim = sims[best_key].mean_return if best_key else nan
    if best_key is not None and best_key in reals:
        best_real = reals[best_key].mean_return
    elif reals and not sims:
        best_real = max(r.mean_return for r in reals.values())
    else:
        best_real = nan
    gaps = [sim2real_gap(sims[k], reals[k]) for k in sorted(sims) if k in reals]
    gap = math.fsum(gaps) / len(gaps) if gaps else nan
    # termination statistics describe the "real" deployment when it exists
    pool = list(reals.values()) or list(sims.values())
    n_eps = sum(len(r.episodes) for r in pool)
    n_limit = sum(r.cause_counts[TerminationCause.JOINT_LIMIT.value] for r in pool)
    hashes = sorted({r.config_hash for r in reports})
    return SummaryRow(strategy, sequence, avg, std, best_sim, best_real, gap,
                      100.0 * n_limit / n_eps, len({r.seed for r in reports}), ";".join(hashes))


def summarize(reports: Iterable[EvalReport]) -> List[SummaryRow]:
    """Table of mean/std/best returns, transfer gap and joint-limit percentage.

    Rows are grouped by (strategy, sequence) in the canonical strategy order.
    Strategies that appear with several sequences also get an ``all`` row.
    """
    reports = list(reports)
    if not reports:
        raise ConfigError("summarize needs at least one report")
    groups = defaultdict(list)
    by_strategy = defaultdict(list)
    for r in reports:
        groups[(r.strategy, r.sequence)].append(r)
        by_strategy[r.strategy].append(r)
    rows = [_summarize_group(s, q, rs) for (s, q), rs in groups.items()]
    for s, rs in by_strategy.items():
        if len({r.sequence for r in rs}) > 1:
            rows.append(_summarize_group(s, "all", rs))
    return sorted(rows, key=_row_key)


def summary_to_csv(rows: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        w.writerow([r.strategy, r.sequence or "N/A", *(repr(float(v)) for v in (
            r.avg_sim, r.std_sim, r.best_sim, r.best_pseudo_real, r.gap, r.pct_joint_limit)),
            r.n_seeds, r.config_hash])
    return buf.getvalue()
