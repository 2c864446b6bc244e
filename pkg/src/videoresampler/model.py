"""Toy end-to-end model: frozen encoder -> resampler -> pooled linear head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import Linear, Module
from .resampler import FeatureSequence, ResampledOutput, Resampler, ResamplerConfig
from .tasks import SyntheticTask
from .tensor import Tensor

PARTS = ("encoder", "resampler", "head")


@dataclass(frozen=True)
class ModelConfig:
    task: SyntheticTask = field(default_factory=SyntheticTask)
    resampler: ResamplerConfig = field(default_factory=ResamplerConfig)

    @classmethod
    def build(cls, task: SyntheticTask, **resampler_kw) -> "ModelConfig":
        resampler_kw.setdefault("max_len", task.frames * task.tokens_per_frame)
        return cls(task, ResamplerConfig(**resampler_kw))

    def to_dict(self) -> dict:
        return {"task": asdict(self.task), "resampler": asdict(self.resampler)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(SyntheticTask(**d["task"]), ResamplerConfig(**d["resampler"]))


class ToyModel(Module):
    """Stand-in pipeline with the three parameter groups of the full system.

    ``encoder`` is a seeded linear map that is permanently frozen;
    ``head`` mean-pools the resampled queries (order-blind) and classifies.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        rc, task = config.resampler, config.task
        rng = np.random.default_rng([rc.seed, 0xE2C])
        self.encoder = Linear(task.d_raw, rc.d_vis, rng)
        for p in self.encoder.parameters():
            p.permanently_frozen = True
            p.requires_grad = False
        self.resampler = Resampler(rc, np.random.default_rng([rc.seed, 0x2E5]))
        self.head = Linear(rc.d_model, task.n_classes, np.random.default_rng([rc.seed, 0x4EAD]))
        self.trained_steps = 0

    def partition(self) -> dict[str, list[tuple[str, Tensor]]]:
        groups: dict[str, list] = {part: [] for part in PARTS}
        for name, p in self.named_parameters():
            groups[name.split(".", 1)[0]].append((name, p))
        return groups

    def resample(self, raw) -> ResampledOutput:
        feats = self.encoder(raw if isinstance(raw, Tensor) else Tensor(raw))
        return self.resampler(FeatureSequence(feats))

    def forward(self, raw, keep_mask: np.ndarray | None = None) -> tuple[Tensor, ResampledOutput]:
        """Logits [B, classes].  ``keep_mask`` [Q] zeroes resampled queries where 0."""
        out = self.resample(raw)
        queries = out.queries_out
        if keep_mask is not None:
            queries = queries * Tensor(np.asarray(keep_mask, dtype=np.float64)[:, None])
        return self.head(queries.mean(axis=-2)), out

    __call__ = forward

    def predict(self, raw, keep_mask: np.ndarray | None = None) -> np.ndarray:
        logits, _ = self.forward(raw, keep_mask)
        return logits.data.argmax(axis=-1)
