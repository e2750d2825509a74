"""Training strategies as phase schedules, and their execution.

A schedule is an ordered list of phases, each with a timestep budget and the
set of randomized parameters (``L`` latency, ``T`` torque, ``N`` noise)
active during it. Parameters are carried across phase boundaries. The ideal
pretraining phase shared by fine-tuning, curriculum and ideal2randomized is
cached so every strategy starts from byte-identical weights.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .env import EpisodeConfig, ReachEnv
from .errors import ProtocolMismatch, ScheduleError
from .evaluation import SIM, EvalProtocol, IkController, evaluate
from .ppo import checkpoint
from .ppo.algorithm import ProgressRecord, TrainConfig, train_loop
from .ppo.policy import PolicyParameters
from .randomization import RandomizationConfig, compose
from .robot import MECHANICAL_LIMITS, JointLimits, RobotGeometry

log = logging.getLogger(__name__)

PARAMS = ("L", "T", "N")
PERMUTATIONS = tuple("".join(p) for p in itertools.permutations("TNL"))
TABLE_SEQUENCES = ("TNL", "TLN", "NTL", "NLT", "LTN", "LNT")
STRATEGIES = ("ideal", "fine_tuning", "curriculum", "ideal2randomized", "randomized", "ik_baseline")
SEQUENCED = ("fine_tuning", "curriculum")

FRESH, INHERITED = "fresh", "inherited"


@dataclass(frozen=True)
class Phase:
    budget: int
    active: frozenset
    start_from: str = FRESH
    pretrain: bool = False

    def __post_init__(self):
        if self.budget <= 0:
            raise ScheduleError(f"phase budget must be positive, got {self.budget}")

    @property
    def label(self) -> str:
        return "".join(p for p in "TNL" if p in self.active) or "ideal"


@dataclass(frozen=True)
class Budgets:
    pretrain: int
    adapt_total: int = 0
    per_phase: int = 0

    @property
    def total(self) -> int:
        return self.pretrain + self.adapt_total

    @classmethod
    def scaled(cls, factor: float = 0.01) -> Budgets:
        """The 31M + 9M (3M per phase) budgets, scaled by ``factor``."""
        return cls(round(31_000_000 * factor), round(9_000_000 * factor), round(3_000_000 * factor))


@dataclass(frozen=True)
class StrategySchedule:
    name: str
    permutation: Optional[str]
    phases: Tuple[Phase, ...]

    @property
    def total_timesteps(self) -> int:
        return sum(p.budget for p in self.phases)

    @property
    def label(self) -> str:
        return f"{self.name}_{self.permutation}" if self.permutation else self.name

    def describe(self) -> str:
        lines = [f"strategy {self.name}" + (f" sequence {self.permutation}" if self.permutation else "")]
        for i, p in enumerate(self.phases):
            active = "{" + ",".join(x for x in "TNL" if x in p.active) + "}"
            role = " (pretrain, cached)" if p.pretrain else ""
            lines.append(f"  phase {i}: {p.budget:>10d} steps  active={active:<9s} start={p.start_from}{role}")
        lines.append(f"  total: {self.total_timesteps} steps")
        return "\n".join(lines)


def build_schedule(name: str, permutation: Optional[str], budgets: Budgets) -> StrategySchedule:
    if name not in STRATEGIES:
        raise ScheduleError(f"unknown strategy {name!r}; expected one of {STRATEGIES}")
    if name in SEQUENCED:
        if permutation not in PERMUTATIONS:
            raise ScheduleError(f"{name} needs a permutation of T, N, L; got {permutation!r}")
        if budgets.per_phase <= 0 or budgets.adapt_total != 3 * budgets.per_phase:
            raise ScheduleError(f"{name} needs adapt_total = 3 * per_phase > 0, got {budgets}")
    elif permutation not in (None, "", "N/A"):
        raise ScheduleError(f"strategy {name} takes no permutation, got {permutation!r}")
    else:
        permutation = None

    everything = frozenset(PARAMS)
    if name == "ik_baseline":
        return StrategySchedule(name, None, ())
    if name in ("ideal", "randomized"):
        if budgets.total <= 0:
            raise ScheduleError(f"{name} needs a positive total budget")
        active = frozenset() if name == "ideal" else everything
        return StrategySchedule(name, None, (Phase(budgets.total, active),))

    if budgets.pretrain <= 0 or budgets.adapt_total <= 0:
        raise ScheduleError(f"{name} needs positive pretrain and adaptation budgets, got {budgets}")
    phases = [Phase(budgets.pretrain, frozenset(), FRESH, pretrain=True)]
    if name == "ideal2randomized":
        phases.append(Phase(budgets.adapt_total, everything, INHERITED))
    elif name == "fine_tuning":
        phases += [Phase(budgets.per_phase, frozenset(p), INHERITED) for p in permutation]
    else:
        phases += [Phase(budgets.per_phase, frozenset(permutation[:k + 1]), INHERITED)
                   for k in range(3)]
    return StrategySchedule(name, permutation, tuple(phases))


def all_schedules(budgets: Budgets) -> List[StrategySchedule]:
    out = []
    for name in STRATEGIES:
        perms = TABLE_SEQUENCES if name in SEQUENCED else (None,)
        out += [build_schedule(name, p, budgets) for p in perms]
    return out


# ---------------------------------------------------------------- execution

def stable_hash(obj) -> str:
    """64-bit hex digest of a canonical JSON rendering."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _jsonable(o):
    if isinstance(o, (frozenset, set)):
        return sorted(o)
    if hasattr(o, "value"):
        return o.value
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


@dataclass(frozen=True)
class TrainingSetup:
    """Everything a phase needs besides its budget, active set and seed."""

    geometry: RobotGeometry = RobotGeometry()
    episode: EpisodeConfig = EpisodeConfig()
    randomization: RandomizationConfig = RandomizationConfig()
    train: TrainConfig = TrainConfig()
    protocol: EvalProtocol = EvalProtocol()
    measure_every: int = 10_000
    mechanical_limits: JointLimits = MECHANICAL_LIMITS

    def fingerprint(self) -> str:
        body = asdict(replace(self, train=replace(self.train, total_timesteps=0, seed=0)))
        return stable_hash(body)

    def env_factory(self, active: frozenset):
        rand = RandomizationConfig.from_params(active, self.randomization)

        def make_env(seq: np.random.SeedSequence):
            env_seq, rand_seq = seq.spawn(2)
            env = ReachEnv(self.geometry, self.episode, mechanical_limits=self.mechanical_limits,
                           rng=np.random.default_rng(env_seq))
            if not active:
                return env
            return compose(env, rand, np.random.default_rng(rand_seq))

        return make_env

    def measure(self, params: PolicyParameters) -> float:
        return evaluate(params, SIM, self.protocol, self.geometry).mean_return


def phase_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


Curve = List[Tuple[int, float]]


def curve_to_csv(curve: Curve, strategy: str, sequence: str, seed: int, config_hash: str,
                 phases: Optional[Sequence[int]] = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "sequence", "seed", "phase", "timesteps", "mean_return", "config_hash"])
    for i, (ts, ret) in enumerate(curve):
        w.writerow([strategy, sequence, seed, phases[i] if phases else 0, ts, repr(float(ret)), config_hash])
    return buf.getvalue()


def curve_from_csv(text: str) -> Curve:
    return [(int(r["timesteps"]), float(r["mean_return"])) for r in csv.DictReader(io.StringIO(text))]


PROGRESS_COLUMNS = ["update_index", "timesteps", "mean_return", "policy_loss", "value_loss", "entropy",
                    "clip_fraction", "termination_counts", "config_hash"]


def progress_to_csv(records: Sequence[ProgressRecord], config_hash: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PROGRESS_COLUMNS)
    for r in records:
        counts = ";".join(f"{k}:{v}" for k, v in r.termination_counts.items())
        w.writerow([r.update_index, r.timesteps, repr(r.mean_return), repr(r.policy_loss),
                    repr(r.value_loss), repr(r.entropy), repr(r.clip_fraction), counts, config_hash])
    return buf.getvalue()


def _atomic_text(path: Path, text: str) -> None:
    checkpoint.atomic_write_bytes(path, text.encode("utf-8"))


class PretrainCache:
    """Create-once store of ideal-pretrained checkpoints keyed by seed, budget and setup."""

    def __init__(self, root):
        self.root = Path(root)

    def _stem(self, seed: int, budget: int, fingerprint: str) -> Path:
        return self.root / f"pretrain_s{seed}_b{budget}_{fingerprint}"

    def get(self, seed: int, budget: int, fingerprint: str):
        stem = self._stem(seed, budget, fingerprint)
        ckpt = stem.with_suffix(".s2rb")
        if not ckpt.exists():
            return None
        meta = json.loads(stem.with_suffix(".json").read_text())
        if meta.get("fingerprint") != fingerprint or meta.get("budget") != budget:
            raise ProtocolMismatch(f"cached pretrain {ckpt.name} was built under a different setup")
        return checkpoint.load(ckpt), [tuple(p) for p in meta["curve"]]

    def put(self, seed: int, budget: int, fingerprint: str, params: PolicyParameters, curve: Curve):
        """Publish an entry; if another writer won the race, return theirs."""
        self.root.mkdir(parents=True, exist_ok=True)
        stem = self._stem(seed, budget, fingerprint)
        meta = {"seed": seed, "budget": budget, "fingerprint": fingerprint,
                "curve": [[int(t), float(r)] for t, r in curve]}
        _atomic_text(stem.with_suffix(".json"), json.dumps(meta, sort_keys=True, indent=1))
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".pretrain.")
        with os.fdopen(fd, "wb") as fh:
            fh.write(checkpoint.to_bytes(params))
        try:
            os.link(tmp, stem.with_suffix(".s2rb"))
        except FileExistsError:
            pass
        finally:
            os.unlink(tmp)
        return self.get(seed, budget, fingerprint)


class RunStore:
    """Per-phase artifacts under ``root/<label>/seed<k>/`` so runs can resume."""

    def __init__(self, root, config_hash: str):
        self.root = Path(root)
        self.config_hash = config_hash

    def seed_dir(self, schedule: StrategySchedule, seed: int) -> Path:
        return self.root / schedule.label / f"seed{seed}"

    def load_phase(self, schedule, seed, index):
        d = self.seed_dir(schedule, seed)
        ckpt, curve = d / f"phase{index}.s2rb", d / f"phase{index}.curve.csv"
        if not (ckpt.exists() and curve.exists()):
            return None
        text = curve.read_text()
        rows = list(csv.DictReader(io.StringIO(text)))
        if rows and rows[0]["config_hash"] != self.config_hash:
            raise ProtocolMismatch(f"{curve} was written under config {rows[0]['config_hash']}, "
                                   f"current config is {self.config_hash}")
        return checkpoint.load(ckpt), curve_from_csv(text)

    def save_phase(self, schedule, seed, index, params, curve, records) -> None:
        d = self.seed_dir(schedule, seed)
        seq = schedule.permutation or ""
        _atomic_text(d / f"phase{index}.progress.csv", progress_to_csv(records, self.config_hash))
        _atomic_text(d / f"phase{index}.curve.csv",
                     curve_to_csv(curve, schedule.name, seq, seed, self.config_hash, [index] * len(curve)))
        # the checkpoint lands last: its presence marks the phase complete
        checkpoint.save(params, d / f"phase{index}.s2rb")

    def save_final(self, schedule, seed, params, curve, phase_of_point) -> List[Path]:
        d = self.seed_dir(schedule, seed)
        seq = schedule.permutation or ""
        written = [d / "curve.csv"]
        _atomic_text(written[0], curve_to_csv(curve, schedule.name, seq, seed, self.config_hash, phase_of_point))
        if params is not None:
            written.append(d / "final.s2rb")
            checkpoint.save(params, written[1])
        return written


@dataclass
class StrategyRun:
    seed: int
    params: Optional[PolicyParameters]
    curve: Curve
    phase_of_point: List[int] = field(default_factory=list)


def run_strategy(schedule: StrategySchedule, setup: TrainingSetup, seeds: Sequence[int],
                 cache: Optional[PretrainCache] = None, store: Optional[RunStore] = None,
                 progress: Optional[Callable[[int, int, ProgressRecord], None]] = None) -> List[StrategyRun]:
    """Train every phase of ``schedule`` for each seed, carrying weights forward."""
    runs = []
    if not schedule.phases:
        ik_return = evaluate(IkController(), SIM, setup.protocol, setup.geometry).mean_return
        for seed in seeds:
            runs.append(StrategyRun(seed, None, [(0, ik_return)], [0]))
            if store is not None:
                store.save_final(schedule, seed, None, runs[-1].curve, [0])
        return runs

    fingerprint = setup.fingerprint()
    for seed in seeds:
        params: Optional[PolicyParameters] = None
        curve: Curve = []
        phase_of_point: List[int] = []
        offset = 0
        for index, phase in enumerate(schedule.phases):
            done = store.load_phase(schedule, seed, index) if store is not None else None
            if done is None:
                records: List[ProgressRecord] = []
                if phase.pretrain and cache is not None:
                    done = cache.get(seed, phase.budget, fingerprint)
                if done is None:
                    done, records = _train_phase(setup, phase, seed, index, params, offset, progress)
                    if phase.pretrain and cache is not None:
                        done = cache.put(seed, phase.budget, fingerprint, *done)
                if store is not None:
                    store.save_phase(schedule, seed, index, done[0], done[1], records)
            params, phase_curve = done
            curve += phase_curve
            phase_of_point += [index] * len(phase_curve)
            offset += phase.budget
            log.info("%s seed %d phase %d done (%d steps)", schedule.label, seed, index, phase.budget)
        if store is not None:
            store.save_final(schedule, seed, params, curve, phase_of_point)
        runs.append(StrategyRun(seed, params, curve, phase_of_point))
    return runs


def _train_phase(setup: TrainingSetup, phase: Phase, seed: int, index: int,
                 params: Optional[PolicyParameters], offset: int, progress):
    cfg = replace(setup.train, total_timesteps=phase.budget, seed=phase_seed(seed, index))
    init = params if phase.start_from == INHERITED else None
    sink = (lambda rec: progress(seed, index, rec)) if progress is not None else None
    result = train_loop(setup.env_factory(phase.active), cfg, init=init, progress=sink,
                        measure=setup.measure, measure_every=setup.measure_every,
                        timestep_offset=offset, measure_initial=init is None)
    return (result.params, result.curve), result.progress
