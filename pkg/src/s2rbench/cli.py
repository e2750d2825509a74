"""Command-line entry point: ``s2rbench <command> [options]``.

Outputs land under ``$S2RB_OUTPUT_ROOT/<output_dir>`` (the output root
defaults to the current directory). Failures print one JSON error record on
stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import glob
import hashlib
import io
import json
import logging
import os
import sys
import time
from collections import defaultdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import yaml

from . import calibration
from .config import DEFAULT_CONFIG, RunConfig, apply_overrides, parse_config
from .errors import CheckpointError, ConfigError, ProtocolMismatch, S2RBError
from .evaluation import (PSEUDO_REAL, SIM, IkController, evaluate, report_from_csv,
                         report_to_csv, summarize, summary_to_csv)
from .ppo import checkpoint
from .strategies import (TABLE_SEQUENCES, SEQUENCED, STRATEGIES, PretrainCache, RunStore,
                         all_schedules, curve_from_csv, run_strategy)

log = logging.getLogger("s2rbench")

OUTPUT_ROOT_ENV = "S2RB_OUTPUT_ROOT"
MANIFEST = "manifest.json"


# ---------------------------------------------------------------- helpers

def _parse_value(text: str):
    """``--set`` values go through YAML so ``3e-4``, ``[0, 1]`` and ``true`` work."""
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {text!r}: {exc}") from None


def resolve_config(args) -> RunConfig:
    if getattr(args, "config", None):
        try:
            raw = yaml.safe_load(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML in {args.config}: {exc}") from None
    else:
        raw = yaml.safe_load(DEFAULT_CONFIG)
    overrides: Dict[str, object] = {}
    if getattr(args, "experiment", None):
        overrides["experiment"] = args.experiment
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = _parse_value(value)
    if getattr(args, "strategy", None):
        overrides["strategy.name"] = args.strategy
        if args.strategy not in SEQUENCED and not getattr(args, "sequence", None):
            overrides["strategy.sequence"] = None
    if getattr(args, "sequence", None):
        overrides["strategy.sequence"] = args.sequence
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = [args.seed]
    return parse_config(apply_overrides(raw or {}, overrides))


def output_dir(cfg: RunConfig) -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / cfg.output_dir


def _write_text(path: Path, text: str) -> None:
    checkpoint.atomic_write_bytes(path, text.encode("utf-8"))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _find_manifest(start: Path) -> Optional[Path]:
    for d in [start, *start.parents][:3]:
        m = d / MANIFEST
        if m.exists():
            return m
    return None


def _check_manifest(ckpt: Path, cfg: RunConfig) -> dict:
    """Refuse a checkpoint produced under a different config; return its manifest (or {})."""
    m = _find_manifest(ckpt.parent)
    if m is None:
        return {}
    manifest = json.loads(m.read_text(encoding="utf-8"))
    if manifest.get("config_hash") != cfg.config_hash:
        raise ProtocolMismatch(f"{ckpt} was trained under config {manifest.get('config_hash')}, "
                               f"current config is {cfg.config_hash}")
    digest = manifest.get("artifacts", {}).get(ckpt.resolve().relative_to(m.parent.resolve()).as_posix())
    if digest is not None and digest != _sha256(ckpt):
        raise CheckpointError(f"{ckpt} does not match the digest recorded in {m}")
    return manifest


def _seed_from_path(ckpt: Path) -> int:
    name = ckpt.parent.name
    return int(name[4:]) if name.startswith("seed") and name[4:].isdigit() else -1


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    cfg = resolve_config(args)
    schedule = cfg.schedule()
    out = output_dir(cfg)
    store = RunStore(out, cfg.config_hash)
    cache = PretrainCache(out / "pretrain_cache")
    label_dir = out / schedule.label
    started, t0 = _now(), time.perf_counter()

    def progress(seed, phase, rec):
        log.info("%s seed %d phase %d: %d steps, return %.2f", schedule.label, seed, phase,
                 rec.timesteps, rec.mean_return)

    runs = run_strategy(schedule, cfg.setup(), cfg.seeds, cache=cache, store=store, progress=progress)
    artifacts = {}
    for run in runs:
        for p in sorted(store.seed_dir(schedule, run.seed).iterdir()):
            if p.is_file() and not p.name.startswith("."):
                artifacts[p.relative_to(label_dir).as_posix()] = _sha256(p)
    manifest = {
        "config_hash": cfg.config_hash,
        "config": cfg.resolved,
        "strategy": schedule.name,
        "sequence": schedule.permutation,
        "seeds": list(cfg.seeds),
        "total_timesteps": schedule.total_timesteps,
        "started": started,
        "finished": _now(),
        "wall_time_s": round(time.perf_counter() - t0, 3),
        "artifacts": artifacts,
    }
    _write_text(label_dir / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    for run in runs:
        print(f"{schedule.label} seed {run.seed}: final return {run.curve[-1][1]:.3f}")
    print(f"wrote {label_dir}")
    return 0


def _env_kinds(kind: str) -> List[str]:
    return [SIM, PSEUDO_REAL] if kind == "both" else [kind]


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise CheckpointError(f"checkpoint {ckpt} does not exist")
    manifest = _check_manifest(ckpt, cfg)
    params = checkpoint.load(ckpt)
    strategy = manifest.get("strategy", cfg.strategy)
    sequence = manifest.get("sequence", cfg.sequence) or ""
    seed = _seed_from_path(ckpt)
    reports = [evaluate(params, kind, cfg.protocol, cfg.geometry, cfg.pseudo_real, strategy, sequence,
                        seed, cfg.config_hash) for kind in _env_kinds(args.env_kind)]
    # render everything before the first write so a failure leaves no partial CSV
    texts = [(Path(args.output_dir or ckpt.parent) / f"eval_{ckpt.stem}_{r.env_kind}.csv", report_to_csv(r))
             for r in reports]
    for (path, text), r in zip(texts, reports):
        _write_text(path, text)
        print(f"{r.env_kind}: mean return {r.mean_return:.3f}, joint-limit {r.pct_joint_limit:.1f}% -> {path}")
    return 0


def cmd_baseline(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.output_dir) if args.output_dir else output_dir(cfg) / "ik_baseline"
    reports = [evaluate(IkController(), kind, cfg.protocol, cfg.geometry, cfg.pseudo_real,
                        "ik_baseline", "", 0, cfg.config_hash) for kind in _env_kinds(args.env_kind)]
    for r in reports:
        path = out / f"eval_ik_{r.env_kind}.csv"
        _write_text(path, report_to_csv(r))
        print(f"{r.env_kind}: mean return {r.mean_return:.3f}, joint-limit {r.pct_joint_limit:.1f}% -> {path}")
    return 0


def _expand(patterns: List[str]) -> List[Path]:
    paths = sorted({Path(p) for pat in patterns for p in glob.glob(pat, recursive=True)})
    if not paths:
        raise ConfigError(f"no files match {patterns}")
    return paths


def _measure_every(curve_paths: List[Path], curves: Dict[str, list]) -> int:
    for p in curve_paths:
        m = _find_manifest(p.parent)
        if m is not None:
            return int(json.loads(m.read_text(encoding="utf-8"))["config"]["measure_every"])
    diffs = [b[0] - a[0] for pts in curves.values() for a, b in zip(pts, pts[1:]) if b[0] > a[0]]
    return int(np.bincount(diffs).argmax()) if diffs else 1


def plot_curves(curve_paths: List[Path], out: Path, config_hash: str) -> dict:
    """Mean return vs timesteps, one line per strategy label (seed-mean)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.ticker import MultipleLocator

    by_label: Dict[str, Dict[int, list]] = defaultdict(lambda: defaultdict(list))
    curves = {}
    for p in curve_paths:
        text = p.read_text(encoding="utf-8")
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            continue
        if rows[0]["config_hash"] != config_hash:
            raise ProtocolMismatch(f"{p} has config {rows[0]['config_hash']}, reports have {config_hash}")
        label = rows[0]["strategy"] + (f"_{rows[0]['sequence']}" if rows[0]["sequence"] else "")
        curves[str(p)] = curve_from_csv(text)
        for ts, ret in curves[str(p)]:
            by_label[label][ts].append(ret)
    spacing = _measure_every(curve_paths, curves)
    fig, ax = plt.subplots(figsize=(9, 5))
    for label in sorted(by_label):
        pts = sorted(by_label[label].items())
        ax.plot([t for t, _ in pts], [float(np.mean(v)) for _, v in pts], label=label, linewidth=1.2)
    ax.xaxis.set_major_locator(MultipleLocator(spacing))
    ax.tick_params(axis="x", labelsize=6, labelrotation=90)
    ax.set_xlabel("timesteps")
    ax.set_ylabel("mean return (evaluation targets, sim)")
    ax.set_title(f"training curves, config {config_hash}")
    ax.grid(alpha=0.3)
    if by_label:
        ax.legend(fontsize=7)
    fig.tight_layout()
    png = out / "curves.png"
    png.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(png, dpi=120, metadata={"Software": None})
    plt.close(fig)
    meta = {"config_hash": config_hash, "x_label": "timesteps", "y_label": "mean_return",
            "x_tick_spacing": spacing, "x_limits": [float(v) for v in ax.get_xlim()],
            "series": sorted(by_label), "image": png.name}
    _write_text(out / "curves.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return meta


def cmd_report(args) -> int:
    paths = _expand(args.reports)
    reports = [report_from_csv(p.read_text(encoding="utf-8")) for p in paths]
    hashes = {r.config_hash for r in reports}
    if len(hashes) > 1:
        raise ProtocolMismatch(f"reports mix config hashes {sorted(hashes)}; refusing to combine them")
    config_hash = hashes.pop()
    out = Path(args.output_dir) if args.output_dir else paths[0].parent
    rows = summarize(reports)
    _write_text(out / "summary.csv", summary_to_csv(rows))
    curve_paths = _expand(args.curves) if args.curves else sorted(
        {p.parent / "curve.csv" for p in paths if (p.parent / "curve.csv").exists()})
    if curve_paths:
        plot_curves(curve_paths, out, config_hash)
    for r in rows:
        print(f"{r.strategy:<17s} {r.sequence or 'N/A':<4s} avg_sim {r.avg_sim:9.3f} +- {r.std_sim:7.3f}  "
              f"best_pr {r.best_pseudo_real:9.3f}  gap {r.gap:8.3f}  joint-limit {r.pct_joint_limit:5.1f}%")
    print(f"wrote {out / 'summary.csv'}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = resolve_config(args)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise CheckpointError(f"checkpoint {ckpt} does not exist")
    _check_manifest(ckpt, cfg)
    params = checkpoint.load(ckpt)
    res = calibration.calibrate(params, args.parameter, cfg.protocol, cfg.geometry,
                                tolerance=args.tolerance, max_steps=args.max_steps)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["parameter", "width_step", "low", "high", "mean_return", "degradation", "passed", "config_hash"])
    for pt in res.points:
        lo, hi = pt.range if pt.range else ("", "")
        w.writerow([res.parameter, pt.width_step, lo, hi, repr(pt.mean_return), repr(pt.degradation),
                    int(pt.passed), cfg.config_hash])
    out = Path(args.output_dir or ckpt.parent) / f"calibration_{args.parameter}.csv"
    _write_text(out, buf.getvalue())
    print(f"ideal {res.r_ideal:.3f}, random agent {res.r_random:.3f}")
    for pt in res.points:
        print(f"  step {pt.width_step:2d} range {pt.range}  return {pt.mean_return:9.3f}  "
              f"degradation {pt.degradation:+.3f}  {'pass' if pt.passed else 'FAIL'}")
    widest = "zero width only" if res.widest is None else f"[{res.widest[0]:g}, {res.widest[1]:g}]"
    note = " (sweep exhausted before any failure)" if res.exhausted else ""
    print(f"widest range for {args.parameter}: {widest}{note}")
    return 0


def cmd_schedule_print(args) -> int:
    cfg = resolve_config(args)
    if args.all:
        schedules = all_schedules(cfg.budgets)
    else:
        schedules = [cfg.schedule()]
    print("\n\n".join(s.describe() for s in schedules))
    return 0


# ---------------------------------------------------------------- parser

def _config_args(p: argparse.ArgumentParser, run_selection: bool = True) -> None:
    p.add_argument("--config", help="YAML run config (default: built-in exp1 desk-scale config)")
    p.add_argument("--experiment", choices=["exp1_1rad", "exp2_pi9"])
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key, e.g. train.learning_rate=1e-3 (repeatable)")
    if run_selection:
        p.add_argument("--strategy", choices=STRATEGIES)
        p.add_argument("--sequence", help=f"randomization order for fine_tuning/curriculum, e.g. {TABLE_SEQUENCES[0]}")
        p.add_argument("--seed", type=int, help="run a single seed instead of the config's list")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s2rbench", description="Sim-to-real domain randomization benchmark")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one strategy for every configured seed (resumable)")
    _config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the fixed target set")
    _config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env-kind", choices=[SIM, PSEUDO_REAL, "both"], default="both")
    p.add_argument("--output-dir", help="where to write the report CSV (default: next to the checkpoint)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="evaluate the inverse-kinematics baseline")
    _config_args(p, run_selection=False)
    p.add_argument("--env-kind", choices=[SIM, PSEUDO_REAL, "both"], default="both")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("report", help="summarize evaluation CSVs into a comparison table and curve plot")
    p.add_argument("reports", nargs="+", help="report CSV paths or glob patterns")
    p.add_argument("--curves", nargs="*", help="curve CSV paths or globs (default: curve.csv beside each report)")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("calibrate", help="find the widest single-parameter range an ideal agent tolerates")
    _config_args(p, run_selection=False)
    p.add_argument("--checkpoint", required=True, help="ideal-trained checkpoint")
    p.add_argument("--parameter", choices=["L", "T", "N"], required=True)
    p.add_argument("--tolerance", type=float, default=0.10)
    p.add_argument("--max-steps", type=int, default=40)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("schedule", help="inspect phase schedules")
    ssub = p.add_subparsers(dest="schedule_command", required=True)
    pp = ssub.add_parser("print", help="print the phase list of a strategy")
    _config_args(pp)
    pp.add_argument("--all", action="store_true", help="print every strategy and sequence")
    pp.set_defaults(func=cmd_schedule_print)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a machine-readable record
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        if isinstance(exc, S2RBError):
            return 2
        return 3 if isinstance(exc, OSError) else 1


if __name__ == "__main__":
    sys.exit(main())
