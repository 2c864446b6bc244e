"""Run configuration as a versioned INI-style key-value file.

Example::

    [run]
    schema_version = 1
    seed = 0
    stages = pretrain,finetune
    eval_samples = 2000

    [task]
    kind = recall

    [resampler]
    method = group
    groups = 2

    [pretrain]
    steps_per_epoch = 1000

Unset keys take the defaults of :class:`SyntheticTask`,
:class:`ResamplerConfig` and :meth:`TrainConfig.desk`.  ``seed`` under
``[run]`` seeds both initialisation and batch drawing.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigurationError, PlanError
from .model import ModelConfig
from .resampler import GroupPlan, ResamplerConfig
from .tasks import SyntheticTask
from .train import STAGES, TrainConfig

SCHEMA_VERSION = 1
RUN_DEFAULTS = {"schema_version": SCHEMA_VERSION, "seed": 0, "stages": "pretrain,finetune", "eval_samples": 2000}
# Seeds come from [run] only.
SEEDED = {"seed"}


def _coerce(raw: str, like, where: str):
    kind = type(like)
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw.strip())
    except ValueError:
        raise ConfigurationError(f"{where}: cannot read {raw!r} as {kind.__name__}") from None


def _section(cls_defaults: dict, values: dict[str, str], section: str) -> dict:
    out = {}
    for key, raw in values.items():
        if key not in cls_defaults:
            raise ConfigurationError(f"[{section}] unknown key {key!r}; allowed: {sorted(cls_defaults)}")
        out[key] = _coerce(raw, cls_defaults[key], f"[{section}] {key}")
    return out


def _defaults(cls) -> dict:
    return {f.name: getattr(cls(), f.name) for f in fields(cls) if f.name not in SEEDED}


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    stages: tuple[str, ...]
    train: dict[str, TrainConfig]
    seed: int = 0
    eval_samples: int = 2000

    def snapshot(self) -> dict[str, dict[str, str]]:
        """Every resolved key as strings, suitable for :func:`from_snapshot`."""
        snap = {
            "run": {"schema_version": str(SCHEMA_VERSION), "seed": str(self.seed), "stages": ",".join(self.stages), "eval_samples": str(self.eval_samples)},
            "task": {f.name: str(getattr(self.model.task, f.name)) for f in fields(SyntheticTask)},
            "resampler": {f.name: str(getattr(self.model.resampler, f.name)) for f in fields(ResamplerConfig) if f.name not in SEEDED},
        }
        for stage, cfg in self.train.items():
            snap[stage] = {f.name: str(getattr(cfg, f.name)) for f in fields(TrainConfig) if f.name not in SEEDED}
        return snap

    def check(self) -> None:
        """Raise :class:`PlanError` if the resampler cannot split this task's clips."""
        rc, task = self.model.resampler, self.model.task
        if rc.method == "group":
            GroupPlan.for_sequence(rc.groups, rc.total_queries, task.frames, task.tokens_per_frame, rc.align_frames)
        elif rc.method == "image" and rc.total_queries % task.frames:
            raise PlanError(f"total queries {rc.total_queries} is not divisible by frames {task.frames}")

    def to_ini(self) -> str:
        lines = []
        for section, values in self.snapshot().items():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in values.items())
            lines.append("")
        return "\n".join(lines)


def from_snapshot(data: dict[str, dict[str, str]]) -> RunConfig:
    """Build a :class:`RunConfig` from section -> key -> string values."""
    known = {"run", "task", "resampler", *STAGES}
    extra = set(data) - known
    if extra:
        raise ConfigurationError(f"unknown sections {sorted(extra)}; allowed: {sorted(known)}")
    run = {**RUN_DEFAULTS, **_section(RUN_DEFAULTS, data.get("run", {}), "run")}
    if run["schema_version"] != SCHEMA_VERSION:
        raise ConfigurationError(f"schema_version {run['schema_version']} is not supported (expected {SCHEMA_VERSION})")
    stages = tuple(s.strip() for s in run["stages"].split(",") if s.strip())
    if not stages or any(s not in STAGES for s in stages):
        raise ConfigurationError(f"stages must be a comma list drawn from {STAGES}, got {run['stages']!r}")

    task = SyntheticTask(**_section(_defaults(SyntheticTask), data.get("task", {}), "task"))
    rkw = _section(_defaults(ResamplerConfig), data.get("resampler", {}), "resampler")
    rkw.setdefault("max_len", task.frames * task.tokens_per_frame)
    model = ModelConfig(task, ResamplerConfig(seed=run["seed"], **rkw))
    train = {}
    for stage in stages:
        base = TrainConfig.desk(stage)
        defaults = {f.name: getattr(base, f.name) for f in fields(TrainConfig) if f.name not in SEEDED}
        kw = {**defaults, **_section(defaults, data.get(stage, {}), stage)}
        train[stage] = TrainConfig(seed=run["seed"], **kw)
    return RunConfig(model, stages, train, run["seed"], run["eval_samples"])


def parse_overrides(pairs) -> dict[str, dict[str, str]]:
    """``section.key=value`` strings into a nested mapping."""
    out: dict[str, dict[str, str]] = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not name:
            raise ConfigurationError(f"override {pair!r} is not of the form section.key=value")
        out.setdefault(section, {})[name] = value.strip()
    return out


def read_ini(path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    text = Path(path).read_text()
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return {s: dict(parser[s]) for s in parser.sections()}


def load_config(path=None, overrides=None) -> RunConfig:
    """Read ``path`` (or start from defaults) and apply ``section.key=value`` overrides."""
    data = read_ini(path) if path is not None else {}
    for section, values in parse_overrides(overrides).items():
        data.setdefault(section, {}).update(values)
    return from_snapshot(data)
