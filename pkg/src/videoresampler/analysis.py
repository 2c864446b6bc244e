"""Diagnostics for trained resamplers.

* attention heatmap export (CSV, plain PGM and a range sidecar)
* query-zeroing probe and the redundancy index summarising it
* query/group sweeps over small training runs
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import AttentionUnavailable, ConfigurationError, PlanError, ResamplerError
from .model import ModelConfig, ToyModel
from .resampler import GroupPlan, ResampledOutput, token_budget
from .tasks import SyntheticTask
from .train import FreezePlan, TrainConfig, evaluate, run_stage

SELECTIONS = ("random", "first", "last")
REQUIRED_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)


class ProbeInvalidWarning(UserWarning):
    """The zeroing probe was run on a model that has never been trained."""


# Heatmaps


@dataclass
class HeatmapArtifact:
    matrix: np.ndarray  # [Q, L]
    csv_path: Path
    pgm_path: Path
    annotations_path: Path
    query_ranges: list[tuple[int, int]]
    span_ranges: list[tuple[int, int]]
    frame_ranges: list[tuple[int, int]]


def forbidden_cells(out: ResampledOutput) -> np.ndarray:
    """Boolean [Q, L] mask of cells a query may not attend under ``out.method``."""
    q = out.query_ranges[-1][1]
    length = out.span_ranges[-1][1]
    allowed = np.zeros((q, length), dtype=bool)
    for (q0, q1), (s0, s1) in zip(out.query_ranges, out.span_ranges):
        allowed[q0:q1, s0:s1] = True
    return ~allowed


def _select(maps: np.ndarray | None, sample: int, head: int | None) -> np.ndarray:
    if maps is None:
        raise AttentionUnavailable("attention was not retained; rebuild with retain_attention=True")
    batched = maps.ndim == (4 if head is not None else 3)
    m = maps[sample] if batched else maps
    return m[head] if head is not None else m


def _annotation_text(out: ResampledOutput, matrix: np.ndarray) -> str:
    lines = [
        "# ranges are half-open start:stop",
        f"method {out.method}",
        f"queries {matrix.shape[0]}",
        f"tokens {matrix.shape[1]}",
    ]
    for g, ((q0, q1), (s0, s1)) in enumerate(zip(out.query_ranges, out.span_ranges)):
        lines.append(f"group {g} queries {q0}:{q1} tokens {s0}:{s1}")
    for f, (t0, t1) in enumerate(out.frame_ranges):
        lines.append(f"frame {f} tokens {t0}:{t1}")
    return "\n".join(lines) + "\n"


def _pgm_text(matrix: np.ndarray) -> str:
    peak = matrix.max(axis=1, keepdims=True)
    scaled = np.divide(matrix, peak, out=np.zeros_like(matrix), where=peak > 0)
    pixels = np.floor(scaled * 255 + 0.5).astype(int)
    rows = [" ".join(map(str, row)) for row in pixels]
    return f"P2\n{matrix.shape[1]} {matrix.shape[0]}\n255\n" + "\n".join(rows) + "\n"


def _csv_text(matrix: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["query"] + [f"t{j}" for j in range(matrix.shape[1])])
    for i, row in enumerate(matrix):
        w.writerow([i] + [repr(float(v)) for v in row])
    return buf.getvalue()


def _write_one(out: ResampledOutput, matrix: np.ndarray, stem: Path) -> HeatmapArtifact:
    paths = tuple(stem.with_name(stem.name + ext) for ext in (".csv", ".pgm", ".ranges.txt"))
    paths[0].write_text(_csv_text(matrix))
    paths[1].write_text(_pgm_text(matrix))
    paths[2].write_text(_annotation_text(out, matrix))
    return HeatmapArtifact(matrix, *paths, out.query_ranges, out.span_ranges, out.frame_ranges)


def export_heatmap(out: ResampledOutput, path, per_head: bool = False, sample: int = 0) -> list[HeatmapArtifact]:
    """Write the head-mean attention map of one sample as ``path``.csv/.pgm/.ranges.txt.

    The CSV keeps full float64 precision; the PGM scales each row by its
    maximum to 0..255.  With ``per_head`` each head also gets its own files
    suffixed ``.h<k>``.  The head-mean artifact is always first in the list.
    """
    stem = Path(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    mean = _select(out.attention, sample, None)
    artifacts = [_write_one(out, mean, stem)]
    if per_head:
        heads = out.head_attention
        if heads is None:
            raise AttentionUnavailable("per-head attention was not retained")
        for h in range(heads.shape[-3]):
            artifacts.append(_write_one(out, _select(heads, sample, h), stem.with_name(f"{stem.name}.h{h}")))
    return artifacts


def load_heatmap_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in row[1:]] for row in rows[1:]], dtype=np.float64).reshape(len(rows) - 1, -1)


# Zeroing probe


@dataclass(frozen=True)
class ZeroingSpec:
    """Which resampled query vectors to zero.  ``seed`` only matters for ``random``."""

    fraction: float
    selection: str = "random"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigurationError(f"fraction must lie in [0, 1], got {self.fraction}")
        if self.selection not in SELECTIONS:
            raise ConfigurationError(f"unknown selection {self.selection!r}; expected one of {SELECTIONS}")

    def count(self, total: int) -> int:
        """Queries zeroed out of ``total``, rounding halves up."""
        return int(math.floor(self.fraction * total + 0.5))

    def keep_mask(self, total: int) -> np.ndarray:
        k = self.count(total)
        mask = np.ones(total)
        if self.selection == "first":
            mask[:k] = 0.0
        elif self.selection == "last":
            mask[total - k :] = 0.0
        else:
            mask[np.random.default_rng([self.seed, 0x2E80]).permutation(total)[:k]] = 0.0
        return mask


@dataclass
class RetentionCurve:
    method: str
    fractions: list[float]
    accuracy_mean: list[float]
    accuracy_sd: list[float]
    retention_mean: list[float]
    retention_sd: list[float]
    seeds: list[int]
    n_samples: int
    chance: float
    per_seed_accuracy: list[list[float]] = field(default_factory=list)  # [fraction][seed]

    def at(self, fraction: float) -> tuple[float, float]:
        """(retention mean, retention sd) at ``fraction``."""
        for f, m, s in zip(self.fractions, self.retention_mean, self.retention_sd):
            if math.isclose(f, fraction, abs_tol=1e-12):
                return m, s
        raise KeyError(fraction)

    def rows(self) -> list[dict]:
        return [
            dict(method=self.method, fraction=f, accuracy_mean=am, accuracy_sd=asd, retention_mean=rm, retention_sd=rsd)
            for f, am, asd, rm, rsd in zip(self.fractions, self.accuracy_mean, self.accuracy_sd, self.retention_mean, self.retention_sd)
        ]


def zeroing_probe(
    model: ToyModel,
    task: SyntheticTask | None,
    fractions,
    seeds,
    selection: str = "random",
    n_samples: int = 1000,
) -> RetentionCurve:
    """Accuracy after zeroing resampled queries, normalised per seed by the unzeroed run.

    Seed ``s`` fixes both the evaluation clips and, for random selection,
    which queries are zeroed.  Fraction 0 must be among ``fractions``.
    """
    task = task or model.config.task
    fractions = [float(f) for f in fractions]
    seeds = [int(s) for s in seeds]
    if not any(f == 0.0 for f in fractions):
        raise ConfigurationError("fractions must include 0")
    if not seeds:
        raise ConfigurationError("at least one seed is required")
    if model.trained_steps == 0:
        warnings.warn("zeroing probe on an untrained model; retention is not meaningful", ProbeInvalidWarning, stacklevel=2)
    total = model.config.resampler.total_queries

    def acc(f: float, s: int) -> float:
        mask = ZeroingSpec(f, selection, s).keep_mask(total)
        return evaluate(model, task, n_samples, seed=[s, 0xAC], keep_mask=mask)

    base = {s: acc(0.0, s) for s in seeds}
    if any(v == 0 for v in base.values()):
        raise ResamplerError("unzeroed accuracy is 0 for some seed; retention is undefined")
    table = [[base[s] if f == 0.0 else acc(f, s) for s in seeds] for f in fractions]
    ret = [[a / base[s] for a, s in zip(row, seeds)] for row in table]
    return RetentionCurve(
        method=model.config.resampler.method,
        fractions=fractions,
        accuracy_mean=[float(np.mean(r)) for r in table],
        accuracy_sd=[float(np.std(r)) for r in table],
        retention_mean=[float(np.mean(r)) for r in ret],
        retention_sd=[float(np.std(r)) for r in ret],
        seeds=seeds,
        n_samples=n_samples,
        chance=task.chance,
        per_seed_accuracy=table,
    )


def redundancy_index(curve) -> float:
    """Trapezoid area under retention against fraction zeroed.

    ``curve`` is a :class:`RetentionCurve` or a mapping fraction -> retention
    and must cover 0, .25, .5, .75 and 1.  Retention is clipped to [0, 1]
    first, so the index also lies in [0, 1]; higher means more redundant.
    """
    if isinstance(curve, RetentionCurve):
        pairs = list(zip(curve.fractions, curve.retention_mean))
    else:
        pairs = [(float(f), float(r)) for f, r in dict(curve).items()]
    have = [f for f, _ in pairs]
    missing = [f for f in REQUIRED_FRACTIONS if not any(math.isclose(f, h, abs_tol=1e-12) for h in have)]
    if missing:
        raise ValueError(f"retention curve is missing fractions {missing}")
    if any(not 0.0 <= f <= 1.0 for f in have):
        raise ValueError("fractions must lie in [0, 1]")
    pairs.sort()
    xs = np.array([f for f, _ in pairs])
    ys = np.clip([r for _, r in pairs], 0.0, 1.0)
    return float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1]) / 2.0))


# Sweeps


@dataclass(frozen=True)
class SweepGrid:
    """Cartesian grid over frames, groups and either total queries or queries per group."""

    frames: tuple[int, ...]
    groups: tuple[int, ...]
    total_queries: tuple[int, ...] = ()
    queries_per_group: tuple[int, ...] = ()

    def __post_init__(self):
        if bool(self.total_queries) == bool(self.queries_per_group):
            raise ConfigurationError("give exactly one of total_queries or queries_per_group")
        if not self.frames or not self.groups:
            raise ConfigurationError("sweep grid is empty")

    def points(self) -> list[tuple[int, int, int]]:
        """(N, Q_total, M) for every grid point in axis order."""
        out = []
        if self.total_queries:
            for n, q, m in itertools.product(self.frames, self.total_queries, self.groups):
                out.append((n, q, m))
        else:
            for n, qpg, m in itertools.product(self.frames, self.queries_per_group, self.groups):
                out.append((n, qpg * m, m))
        return out


SWEEP_COLUMNS = ("N", "Q_total", "M", "q_per_group", "accuracy", "budget", "wall_time", "status", "reason", "image_equivalent")


@dataclass(frozen=True)
class SweepSettings:
    task: SyntheticTask
    resampler: dict  # ResamplerConfig fields other than method/total_queries/groups/max_len
    stages: tuple[str, ...]
    train: dict[str, TrainConfig]
    eval_samples: int = 1000


def _run_point(args) -> dict:
    (n, q, m), settings = args
    task = replace(settings.task, frames=n)
    row = dict(N=n, Q_total=q, M=m, q_per_group="", accuracy="", budget="", wall_time="", status="", reason="", image_equivalent=m == n)
    try:
        GroupPlan.for_sequence(m, q, n, task.tokens_per_frame, settings.resampler.get("align_frames", False))
    except PlanError as exc:
        row.update(status="skipped", reason=str(exc))
        return row
    row["q_per_group"] = q // m
    row["budget"] = token_budget("group", n, task.tokens_per_frame, total_queries=q).queries_out_count
    start = time.perf_counter()
    try:
        model = ToyModel(ModelConfig.build(task, method="group", total_queries=q, groups=m, **settings.resampler))
        for stage in settings.stages:
            run_stage(model, FreezePlan(stage), settings.train[stage])
        row["accuracy"] = evaluate(model, task, settings.eval_samples)
        row["status"] = "ok"
    except ResamplerError as exc:
        row.update(status="failed", reason=f"{type(exc).__name__}: {exc}")
    row["wall_time"] = round(time.perf_counter() - start, 3)
    return row


def run_sweep(grid: SweepGrid, settings: SweepSettings, workers: int = 1) -> list[dict]:
    """One train+eval run per grid point with fixed seeds; invalid points are skipped with a reason.

    Rows come back in grid order whatever ``workers`` is.
    """
    jobs = [(p, settings) for p in grid.points()]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_run_point, jobs))
    return [_run_point(j) for j in jobs]


def write_rows(rows: list[dict], path, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in columns})
