"""Command-line entry point.

Exit codes: 0 success, 1 training aborted or unexpected failure,
2 unreadable or malformed input, 3 invalid configuration or constraint,
4 missing artifact from an earlier command.

Relative ``--out`` directories resolve against ``$VIDEORESAMPLER_ARTIFACT_ROOT``
(default ``./artifacts``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    SWEEP_COLUMNS,
    SweepGrid,
    SweepSettings,
    export_heatmap,
    redundancy_index,
    run_sweep,
    write_rows,
    zeroing_probe,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, from_snapshot, load_config
from .errors import CapacityError, ConfigurationError, FormatError, TrainingAborted
from .ingest import RuleSet, SampleSpec, curate, read_corpus, read_meta, sample, write_video
from .model import ToyModel
from .resampler import METHODS, budget_table, token_budget
from .tasks import generate_task
from .train import FreezePlan, evaluate, run_stage

ARTIFACT_ROOT_ENV = "VIDEORESAMPLER_ARTIFACT_ROOT"
EXIT_OK, EXIT_FAILED, EXIT_INPUT, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3, 4
CHECKPOINT, CONFIG, MANIFEST = "model.tlvr", "config.ini", "manifest.json"
# Extra checkpoint record holding the number of optimizer steps taken.
STEPS_KEY = "_meta.trained_steps"


class MissingArtifact(Exception):
    pass


def artifact_root() -> Path:
    return Path(os.environ.get(ARTIFACT_ROOT_ENV, "artifacts"))


def resolve_out(out: str | None, command: str) -> Path:
    path = Path(out) if out else Path(command)
    return path if path.is_absolute() else artifact_root() / path


def _csv_list(kind):
    def parse(text: str):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma list of {kind.__name__}, got {text!r}") from None

    return parse


class Manifest:
    """Run record written before compute starts and rewritten on exit."""

    def __init__(self, out: Path, command: str, args: dict, config: RunConfig | None):
        self.path = out / MANIFEST
        self.data = {
            "command": command,
            "args": args,
            "config": config.snapshot() if config else None,
            "seed": config.seed if config else args.get("seed"),
            "artifacts": [],
            "tool_version": __version__,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "finished": None,
            "status": "running",
        }
        out.mkdir(parents=True, exist_ok=True)
        self._write()

    def add(self, *paths) -> None:
        self.data["artifacts"].extend(str(p) for p in paths)

    def finish(self, status: str) -> None:
        self.data["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        self.data["status"] = status
        self._write()

    def _write(self) -> None:
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


def _replayable(args) -> dict:
    skip = {"func", "manifest", "out", "command", "needs_config"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def load_run(run_dir: Path) -> tuple[RunConfig, ToyModel]:
    ckpt, cfg_path = run_dir / CHECKPOINT, run_dir / CONFIG
    for p in (ckpt, cfg_path):
        if not p.exists():
            raise MissingArtifact(f"{p} not found; run `train` first")
    cfg = load_config(cfg_path)
    model = ToyModel(cfg.model)
    state = load_checkpoint(ckpt)
    steps = state.pop(STEPS_KEY, None)
    model.load_state_dict(state)
    model.trained_steps = int(steps) if steps is not None else 0
    return cfg, model


# Commands


def cmd_sample(args) -> int:
    meta = read_meta(args.video)
    spec = SampleSpec("uniform", args.uniform) if args.uniform is not None else SampleSpec("fps", args.fps, args.max)
    print("\n".join(map(str, sample(meta, spec))))
    return EXIT_OK


def cmd_budget(args) -> int:
    if len(args.frames) == 1 and args.method:
        b = token_budget(args.method, args.frames[0], args.tokens_per_frame, args.queries, args.per_frame)
        print(b.queries_out_count)
        return EXIT_OK
    rows = budget_table(args.frames, args.tokens_per_frame, args.queries, args.per_frame)
    methods = [args.method] if args.method else list(METHODS)
    print(",".join(["frames", "tokens_in", *methods]))
    for r in rows:
        print(",".join(str(r[k]) for k in ["frames", "tokens_in", *methods]))
    return EXIT_OK


def cmd_curate(args) -> int:
    rules = RuleSet.load(args.rules) if args.rules else RuleSet.default()
    for rec in curate(read_corpus(args.corpus), rules):
        print(f"{rec.id}\t{rec.verdict}\t{rec.reason or ''}")
    return EXIT_OK


def cmd_synth_video(args) -> int:
    frames = np.random.default_rng(args.seed).normal(size=(args.frames, args.tokens, args.dim))
    write_video(args.path, frames, args.rate)
    return EXIT_OK


def train_run(cfg: RunConfig, out: Path, manifest: Manifest) -> dict:
    cfg.check()
    model = ToyModel(cfg.model)
    loss_path, summary_path, ckpt_path, cfg_path = out / "loss.csv", out / "summary.json", out / CHECKPOINT, out / CONFIG
    cfg_path.write_text(cfg.to_ini())
    lines, stages, step = ["step,stage,stage_step,loss,lr"], [], 0
    for stage in cfg.stages:
        report = run_stage(model, FreezePlan(stage), cfg.train[stage])
        for r in report.records:
            lines.append(f"{step},{stage},{r.step},{r.loss!r},{r.lr!r}")
            step += 1
        stages.append(report.summary())
    loss_path.write_text("\n".join(lines) + "\n")
    accuracy = evaluate(model, cfg.model.task, cfg.eval_samples)
    summary = {"stages": stages, "accuracy": accuracy, "chance": cfg.model.task.chance, "trained_steps": model.trained_steps}
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    save_checkpoint(ckpt_path, {**model.state_dict(), STEPS_KEY: np.float64(model.trained_steps)})
    manifest.add(cfg_path, loss_path, summary_path, ckpt_path)
    return summary


def cmd_train(args, cfg: RunConfig, out: Path, manifest: Manifest) -> int:
    summary = train_run(cfg, out, manifest)
    print(f"accuracy {summary['accuracy']:.4f} (chance {summary['chance']:.4f}); artifacts in {out}")
    return EXIT_OK


def cmd_probe(args, cfg, out: Path, manifest: Manifest) -> int:
    cfg, model = load_run(Path(args.run))
    curve = zeroing_probe(model, cfg.model.task, args.fractions, args.seeds, args.selection, args.samples)
    path = out / "probe.csv"
    write_rows(curve.rows(), path, ["method", "fraction", "accuracy_mean", "accuracy_sd", "retention_mean", "retention_sd"])
    summary = {"method": curve.method, "chance": curve.chance, "seeds": curve.seeds, "n_samples": curve.n_samples, "per_seed_accuracy": curve.per_seed_accuracy}
    try:
        summary["redundancy_index"] = redundancy_index(curve)
    except ValueError:
        summary["redundancy_index"] = None
    (out / "probe.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    manifest.add(path, out / "probe.json")
    for r in curve.rows():
        print(f"fraction {r['fraction']:.3f}  accuracy {r['accuracy_mean']:.4f} +- {r['accuracy_sd']:.4f}  retention {r['retention_mean']:.4f}")
    return EXIT_OK


def cmd_heatmap(args, cfg, out: Path, manifest: Manifest) -> int:
    cfg, model = load_run(Path(args.run))
    x, _ = generate_task(cfg.model.task, args.clip_seed, 1)
    arts = export_heatmap(model.resample(x), out / "heatmap", per_head=args.per_head)
    for a in arts:
        manifest.add(a.csv_path, a.pgm_path, a.annotations_path)
    print(f"wrote {len(arts) * 3} files to {out}")
    return EXIT_OK


def cmd_sweep(args, cfg: RunConfig, out: Path, manifest: Manifest) -> int:
    grid = SweepGrid(tuple(args.frames), tuple(args.groups), tuple(args.queries or ()), tuple(args.queries_per_group or ()))
    rc = asdict(cfg.model.resampler)
    for k in ("method", "total_queries", "groups", "max_len"):
        rc.pop(k)
    settings = SweepSettings(cfg.model.task, rc, cfg.stages, cfg.train, cfg.eval_samples)
    rows = run_sweep(grid, settings, workers=args.workers)
    path = out / "sweep.csv"
    write_rows(rows, path, SWEEP_COLUMNS)
    manifest.add(path)
    for r in rows:
        print(f"N={r['N']} Q={r['Q_total']} M={r['M']}: {r['status']} {r['accuracy']}{' (image-equivalent)' if r['image_equivalent'] else ''}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="videoresampler", description="Video-level query resampling toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="print sampled frame indices of a video container")
    s.add_argument("video")
    mode = s.add_mutually_exclusive_group(required=True)
    mode.add_argument("--uniform", type=int, metavar="N")
    mode.add_argument("--fps", type=float, metavar="RATE")
    s.add_argument("--max", type=int, default=64, help="frame cap for --fps (default 64)")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("budget", help="visual tokens handed downstream")
    s.add_argument("--method", choices=METHODS)
    s.add_argument("--frames", type=_csv_list(int), required=True, help="frame count, or a comma list for a table")
    s.add_argument("--per-frame", type=int, default=0, help="queries per frame (image-level)")
    s.add_argument("--queries", type=int, default=0, help="total queries (video-level)")
    s.add_argument("--tokens-per-frame", type=int, default=1)
    s.set_defaults(func=cmd_budget)

    s = sub.add_parser("curate", help="filter a caption corpus (id<TAB>duration<TAB>caption)")
    s.add_argument("corpus")
    s.add_argument("--rules")
    s.set_defaults(func=cmd_curate)

    s = sub.add_parser("synth-video", help="write a random video container")
    s.add_argument("path")
    s.add_argument("--frames", type=int, required=True)
    s.add_argument("--rate", type=float, default=30.0)
    s.add_argument("--tokens", type=int, default=1)
    s.add_argument("--dim", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth_video)

    def run_command(name, func, help_text, needs_config):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--out", help=f"artifact directory (default $VIDEORESAMPLER_ARTIFACT_ROOT/{name})")
        s.add_argument("--manifest", help="replay the arguments and config recorded in this manifest")
        if needs_config:
            s.add_argument("--config", help="INI run configuration")
            s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        s.set_defaults(func=func, needs_config=needs_config)
        return s

    run_command("train", cmd_train, "train the toy model stage by stage", True)

    s = run_command("probe", cmd_probe, "query-zeroing retention curve", False)
    s.add_argument("--run", required=True, help="directory written by `train`")
    s.add_argument("--fractions", type=_csv_list(float), default=[0.0, 0.25, 0.5, 0.75, 1.0])
    s.add_argument("--seeds", type=_csv_list(int), default=[0, 1, 2, 3, 4])
    s.add_argument("--selection", choices=["random", "first", "last"], default="random")
    s.add_argument("--samples", type=int, default=1000)

    s = run_command("heatmap", cmd_heatmap, "export last-layer attention of one clip", False)
    s.add_argument("--run", required=True, help="directory written by `train`")
    s.add_argument("--clip-seed", type=int, default=0)
    s.add_argument("--per-head", action="store_true")

    s = run_command("sweep", cmd_sweep, "train and evaluate over a grid of (N, Q, M)", True)
    s.add_argument("--frames", type=_csv_list(int), required=True)
    s.add_argument("--groups", type=_csv_list(int), required=True)
    qs = s.add_mutually_exclusive_group(required=True)
    qs.add_argument("--queries", type=_csv_list(int))
    qs.add_argument("--queries-per-group", type=_csv_list(int))
    s.add_argument("--workers", type=int, default=1)
    return p


def _run_artifact_command(args) -> int:
    config = None
    if args.manifest:
        recorded = json.loads(Path(args.manifest).read_text())
        if recorded.get("command") != args.command:
            raise ConfigurationError(f"manifest records command {recorded.get('command')!r}, not {args.command!r}")
        for k, v in recorded["args"].items():
            setattr(args, k, v)
        if recorded.get("config") is not None:
            config = from_snapshot(recorded["config"])
    elif args.needs_config:
        if args.config and not Path(args.config).exists():
            raise FileNotFoundError(args.config)
        config = load_config(args.config, args.set)
    out = resolve_out(args.out, args.command)
    manifest = Manifest(out, args.command, _replayable(args), config)
    try:
        code = args.func(args, config, out, manifest)
    except BaseException as exc:
        manifest.finish(f"error: {type(exc).__name__}: {exc}")
        raise
    manifest.finish("ok")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if hasattr(args, "needs_config"):
            return _run_artifact_command(args)
        return args.func(args)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (FormatError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigurationError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
