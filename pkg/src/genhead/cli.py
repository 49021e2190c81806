"""Command-line entry point: reproducible training runs, head comparisons,
dataset statistics, and the gradient-check suite.

Flag precedence is CLI flag > config-file value > built-in default. Every
training run writes a manifest (config snapshot + seed + artifact list) into
its output directory before compute starts, so aborted runs stay diagnosable.

Exit codes: 0 success, 1 aborted training (non-finite loss), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .checks import run_gradient_checks
from .data import CIFAR10_LABELS, channel_stats, load_cifar10, synth_dataset, SynthSpec
from .train import (
    GanConfig,
    SrConfig,
    TrainingDiverged,
    config_to_dict,
    gan_config_from_dict,
    run_comparison,
    sr_config_from_dict,
    train_gan,
    train_sr,
)

OUT_DIR_ENV = "GENHEAD_OUT"

EXIT_OK = 0
EXIT_ABORTED = 1
EXIT_USAGE = 2


@dataclass
class Command:
    kind: str  # train-gan | train-sr | compare | stats | gradcheck
    options: dict


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration file")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument(
        "--head",
        choices=["tanh", "bn-tanh", "bn-clip"],
        help="generator output head",
    )
    p.add_argument(
        "--out-dir",
        type=Path,
        default=None,
        help=f"artifact directory (default: ${OUT_DIR_ENV} if set)",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="genhead",
        description="generator output-head laboratory (tanh / bn-tanh / bn-clip)",
    )
    parser.add_argument("--version", action="version", version=f"genhead {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-gan", help="adversarial training on an image dataset")
    _add_common(p)
    p.add_argument("--iters", type=int, help="total generator iterations")

    p = sub.add_parser("train-sr", help="perceptual-loss super-resolution training")
    _add_common(p)
    p.add_argument("--iters", type=int, help="total optimizer steps")

    p = sub.add_parser("compare", help="run every (head, seed) pair and rank heads")
    _add_common(p)
    p.add_argument("--heads", default="tanh,bn-tanh,bn-clip", help="comma-separated heads")
    p.add_argument("--seeds", default="1,2,3", help="comma-separated seeds")
    p.add_argument("--iters", type=int, help="total generator iterations per run")
    p.add_argument(
        "--delta", type=float, default=0.05, help="channel-mean convergence tolerance"
    )

    p = sub.add_parser("stats", help="print per-channel statistics of a dataset")
    p.add_argument("--dataset", choices=["cifar", "synth"], required=True)
    p.add_argument("--data-dir", type=Path, help="CIFAR-10 binary file directory")
    p.add_argument("--class-name", choices=list(CIFAR10_LABELS), help="CIFAR class filter")
    p.add_argument("--class-index", type=int, help="CIFAR label byte (overrides name)")
    p.add_argument("--config", type=Path, help="JSON config with a synth dataset spec")
    p.add_argument("--n", type=int, default=512, help="synthetic sample count")
    p.add_argument("--size", type=int, default=16, help="synthetic image size")

    p = sub.add_parser("gradcheck", help="finite-difference checks for every op")
    p.add_argument("--seed", type=int, default=0)

    return parser


def parse_args(argv: list[str]) -> Command:
    """Parse argv into a Command; exits with code 2 on usage errors."""
    ns = _build_parser().parse_args(argv)
    options = vars(ns)
    kind = options.pop("command")
    return Command(kind=kind, options=options)


def _load_config_file(path: Path | None) -> dict:
    if path is None:
        return {}
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _resolve_out_dir(opt) -> Path | None:
    if opt is not None:
        return Path(opt)
    env = os.environ.get(OUT_DIR_ENV)
    return Path(env) if env else None


def _write_manifest(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _artifact_list(out_dir: Path) -> list[str]:
    return sorted(
        str(p.relative_to(out_dir)) for p in out_dir.rglob("*") if p.is_file()
    )


def _run_training(kind: str, opts: dict) -> int:
    overrides = {"seed": opts.get("seed"), "head": opts.get("head")}
    if kind == "train-gan":
        overrides["total_gen_iters"] = opts.get("iters")
        cfg = gan_config_from_dict(_load_config_file(opts.get("config")), **overrides)
        runner = train_gan
    else:
        overrides["total_iters"] = opts.get("iters")
        cfg = sr_config_from_dict(_load_config_file(opts.get("config")), **overrides)
        runner = train_sr

    out_dir = _resolve_out_dir(opts.get("out_dir"))
    manifest = {
        "command": kind,
        "version": __version__,
        "seed": cfg.seed,
        "config": config_to_dict(cfg),
        "status": "running",
        "artifacts": [],
    }
    if out_dir is not None:
        _write_manifest(out_dir, manifest)
    try:
        log = runner(cfg, out_dir)
    except TrainingDiverged as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        if out_dir is not None:
            manifest["status"] = "aborted"
            manifest["abort"] = {"iteration": exc.iteration, "detail": exc.detail}
            manifest["artifacts"] = _artifact_list(out_dir)
            _write_manifest(out_dir, manifest)
        return EXIT_ABORTED
    if out_dir is not None:
        manifest["status"] = "complete"
        manifest["artifacts"] = _artifact_list(out_dir)
        _write_manifest(out_dir, manifest)
    last = f", {len(log)} records" if len(log) else ""
    print(f"{kind} finished: {log.meta}{last}")
    return EXIT_OK


def _run_compare(opts: dict) -> int:
    heads = [h.strip() for h in opts["heads"].split(",") if h.strip()]
    seeds = [int(s) for s in opts["seeds"].split(",") if s.strip()]
    overrides = {"seed": opts.get("seed"), "total_gen_iters": opts.get("iters")}
    base = gan_config_from_dict(_load_config_file(opts.get("config")), **overrides)
    if opts.get("head"):
        heads = [opts["head"]]
    out_dir = _resolve_out_dir(opts.get("out_dir"))
    manifest = {
        "command": "compare",
        "version": __version__,
        "seed": base.seed,
        "config": config_to_dict(base),
        "heads": heads,
        "seeds": seeds,
        "delta": opts["delta"],
        "status": "running",
        "artifacts": [],
    }
    if out_dir is not None:
        _write_manifest(out_dir, manifest)
    try:
        report = run_comparison(base, heads, seeds, delta=opts["delta"], out_dir=out_dir)
    except TrainingDiverged as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        if out_dir is not None:
            manifest["status"] = "aborted"
            manifest["artifacts"] = _artifact_list(out_dir)
            _write_manifest(out_dir, manifest)
        return EXIT_ABORTED
    for run in report.runs:
        marker = "" if run.converged else " (never; capped at total)"
        print(f"{run.head} seed={run.seed}: event iteration {run.event_iteration}{marker}")
    for head in heads:
        print(f"median[{head}] = {report.medians[head]}")
    if out_dir is not None:
        with open(out_dir / "comparison.json", "w", encoding="utf-8") as fh:
            json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        manifest["status"] = "complete"
        manifest["artifacts"] = _artifact_list(out_dir)
        _write_manifest(out_dir, manifest)
    return EXIT_OK


def _run_stats(opts: dict) -> int:
    if opts["dataset"] == "cifar":
        if not opts.get("data_dir"):
            print("stats --dataset cifar requires --data-dir", file=sys.stderr)
            return EXIT_USAGE
        class_filter = opts.get("class_index")
        if class_filter is None and opts.get("class_name"):
            class_filter = CIFAR10_LABELS.index(opts["class_name"])
        batch = load_cifar10(opts["data_dir"], class_filter)
    else:
        config = _load_config_file(opts.get("config"))
        source = config.get("dataset", {})
        spec = SynthSpec(
            mean=tuple(source.get("mean", [-0.15, 0.05, 0.25])),
            std=tuple(source.get("std", [0.30, 0.25, 0.20])),
            structure=source.get("structure", "two-tone-blobs"),
            seed=source.get("seed") or 0,
        )
        batch = synth_dataset(spec, opts["n"], opts["size"], opts["size"])
    stats = channel_stats(batch)
    print(f"N={len(batch)}")
    for c, name in enumerate("RGB"):
        print(f"{name}: mean={stats.mean[c]:+.6f} std={stats.std[c]:.6f}")
    return EXIT_OK


def _run_gradcheck(opts: dict) -> int:
    results = run_gradient_checks(seed=opts.get("seed") or 0)
    width = max(len(r.name) for r in results)
    ok = True
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max_rel_error={r.max_rel_error:.3e}  [{status}]")
        ok &= r.passed
    print(f"gradcheck: {'all passed' if ok else 'FAILURES'}")
    return EXIT_OK if ok else EXIT_ABORTED


def dispatch(cmd: Command) -> int:
    if cmd.kind in ("train-gan", "train-sr"):
        return _run_training(cmd.kind, cmd.options)
    if cmd.kind == "compare":
        return _run_compare(cmd.options)
    if cmd.kind == "stats":
        return _run_stats(cmd.options)
    if cmd.kind == "gradcheck":
        return _run_gradcheck(cmd.options)
    raise ValueError(f"unknown command {cmd.kind!r}")


def main(argv: list[str] | None = None) -> int:
    try:
        cmd = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return dispatch(cmd)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
