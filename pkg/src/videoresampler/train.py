"""Two-stage freeze-based training of :class:`ToyModel`.

Stage ``pretrain`` updates only the resampler; stage ``finetune`` updates the
resampler and the head.  The encoder never updates.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError, NonFiniteError, TrainingAborted
from .model import PARTS, ToyModel
from .tasks import SyntheticTask, generate_task
from .tensor import cross_entropy

STAGES = ("pretrain", "finetune")
TRAINABLE = {"pretrain": frozenset({"resampler"}), "finetune": frozenset({"resampler", "head"})}


@dataclass(frozen=True)
class FreezePlan:
    stage: str

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigurationError(f"unknown stage {self.stage!r}; expected one of {STAGES}")

    @property
    def trainable(self) -> frozenset[str]:
        return TRAINABLE[self.stage]

    @property
    def frozen(self) -> frozenset[str]:
        return frozenset(PARTS) - self.trainable

    def apply(self, model: ToyModel) -> None:
        for part, params in model.partition().items():
            for _, p in params:
                p.requires_grad = part in self.trainable and not p.permanently_frozen


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    lr: float = 3e-3
    warmup_ratio: float = 0.03
    epochs: int = 1
    steps_per_epoch: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_samples: int = 512
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.warmup_ratio < 1:
            raise ConfigurationError(f"warmup_ratio must lie in [0, 1), got {self.warmup_ratio}")
        if self.batch_size < 1 or self.epochs < 1 or self.steps_per_epoch < 1:
            raise ConfigurationError("batch_size, epochs and steps_per_epoch must be positive")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_ratio * self.total_steps))

    @classmethod
    def full_scale(cls, stage: str, **overrides) -> "TrainConfig":
        """Batch size and learning rate of the full-scale recipe for ``stage``."""
        base = {"pretrain": dict(batch_size=128, lr=1e-4), "finetune": dict(batch_size=64, lr=2e-5)}[stage]
        return cls(**{**base, "warmup_ratio": 0.03, "epochs": 1, **overrides})

    @classmethod
    def desk(cls, stage: str, **overrides) -> "TrainConfig":
        base = {"pretrain": dict(batch_size=32, lr=3e-3), "finetune": dict(batch_size=16, lr=1e-3)}[stage]
        return cls(**{**base, **overrides})


def lr_at(step: int, peak: float, warmup: int, total: int) -> float:
    """Linear warmup to ``peak`` over ``warmup`` steps, then half-cosine to 0 at ``total``."""
    if step < warmup:
        return peak * step / warmup
    if total == warmup:
        return peak
    return peak * 0.5 * (1.0 + math.cos(math.pi * (step - warmup) / (total - warmup)))


def lr_schedule(cfg: TrainConfig) -> list[float]:
    """Learning rate for steps 0..total_steps inclusive."""
    return [lr_at(t, cfg.lr, cfg.warmup_steps, cfg.total_steps) for t in range(cfg.total_steps + 1)]


class Adam:
    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def param_digest(params) -> str:
    h = hashlib.sha256()
    for name, p in params:
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def part_digests(model: ToyModel) -> dict[str, str]:
    return {part: param_digest(params) for part, params in model.partition().items()}


@dataclass
class StepRecord:
    step: int
    loss: float
    lr: float


@dataclass
class TrainingReport:
    stage: str
    steps: int
    warmup_steps: int
    records: list[StepRecord] = field(default_factory=list)
    eval_loss_initial: float = math.nan
    eval_loss_final: float = math.nan
    final_accuracy: float = math.nan
    digests_before: dict[str, str] = field(default_factory=dict)
    digests_after: dict[str, str] = field(default_factory=dict)

    @property
    def changed(self) -> set[str]:
        return {k for k in self.digests_before if self.digests_before[k] != self.digests_after[k]}

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("records")
        d["final_train_loss"] = self.records[-1].loss if self.records else math.nan
        d["changed"] = sorted(self.changed)
        return d


def batch_seed(cfg: TrainConfig, stage: str, step: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, STAGES.index(stage), step])


def eval_seed(cfg: TrainConfig) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, 0xE7A1])


def eval_loss(model: ToyModel, x: np.ndarray, y: np.ndarray) -> float:
    logits, _ = model(x)
    return float(cross_entropy(logits.detach(), y).data)


def run_stage(model: ToyModel, plan: FreezePlan, cfg: TrainConfig, task: SyntheticTask | None = None) -> TrainingReport:
    """Train the plan's parameter groups for ``cfg.total_steps`` Adam steps.

    Batch t is drawn from seed (cfg.seed, stage, t).  Frozen groups are
    excluded from the optimizer and their digests are recorded before and
    after so callers can confirm they did not move.
    """
    task = task or model.config.task
    plan.apply(model)
    trainable = [p for part, ps in model.partition().items() if part in plan.trainable for _, p in ps if p.requires_grad]
    opt = Adam(trainable, cfg.beta1, cfg.beta2, cfg.eps)
    report = TrainingReport(plan.stage, cfg.total_steps, cfg.warmup_steps)
    report.digests_before = part_digests(model)

    ex, ey = generate_task(task, eval_seed(cfg), cfg.eval_samples)
    try:
        report.eval_loss_initial = eval_loss(model, ex, ey)
    except NonFiniteError as exc:
        raise TrainingAborted(0, math.nan) from exc

    for t in range(cfg.total_steps):
        lr = lr_at(t, cfg.lr, cfg.warmup_steps, cfg.total_steps)
        x, y = generate_task(task, batch_seed(cfg, plan.stage, t), cfg.batch_size)
        opt.zero_grad()
        try:
            logits, _ = model(x)
            loss = cross_entropy(logits, y)
        except NonFiniteError as exc:
            raise TrainingAborted(t, math.nan) from exc
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingAborted(t, value)
        report.records.append(StepRecord(t, value, lr))
        loss.backward()
        opt.step(lr)
    opt.zero_grad()
    model.trained_steps += cfg.total_steps

    report.eval_loss_final = eval_loss(model, ex, ey)
    report.final_accuracy = float((model.predict(ex) == ey).mean())
    report.digests_after = part_digests(model)
    leaked = report.changed & plan.frozen
    if leaked:
        raise AssertionError(f"frozen groups changed during {plan.stage}: {sorted(leaked)}")
    return report


def evaluate(model, task: SyntheticTask, n_samples: int, seed=12345, keep_mask: np.ndarray | None = None, chunk: int = 512) -> float:
    """Exact-match accuracy of ``model.predict`` on ``n_samples`` fresh clips."""
    x, y = generate_task(task, seed, n_samples)
    correct = 0
    for i in range(0, n_samples, chunk):
        pred = model.predict(x[i : i + chunk], keep_mask) if keep_mask is not None else model.predict(x[i : i + chunk])
        correct += int((np.asarray(pred) == y[i : i + chunk]).sum())
    return correct / n_samples
