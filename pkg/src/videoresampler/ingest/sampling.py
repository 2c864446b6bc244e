"""Frame index selection: fixed count at equal spacing, or fixed temporal rate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class VideoMeta:
    total_frames: int
    frame_rate: float

    def __post_init__(self):
        if self.total_frames < 1:
            raise ValueError(f"total_frames must be >= 1, got {self.total_frames}")
        if not self.frame_rate > 0:
            raise ValueError(f"frame_rate must be > 0, got {self.frame_rate}")

    @property
    def duration(self) -> float:
        return self.total_frames / self.frame_rate


@dataclass(frozen=True)
class SampleSpec:
    mode: str  # "uniform" or "fps"
    target: float  # frame count for uniform, frames/second for fps
    max_frames: int = 64

    def __post_init__(self):
        if self.mode not in ("uniform", "fps"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if self.mode == "uniform" and (self.target < 1 or int(self.target) != self.target):
            raise ValueError(f"uniform target must be a positive integer, got {self.target}")
        if self.mode == "fps" and not self.target > 0:
            raise ValueError(f"fps target must be > 0, got {self.target}")
        if self.max_frames < 1:
            raise ValueError(f"max_frames must be >= 1, got {self.max_frames}")


def uniform_sample(meta: VideoMeta, n: int) -> list[int]:
    """Centre of each of ``n`` equal bins: floor((i + 0.5) * total / n).

    Returns every frame when ``n`` is at least the frame count.
    """
    if n < 1:
        raise ValueError(f"cannot sample {n} frames")
    total = meta.total_frames
    if n >= total:
        return list(range(total))
    return [((2 * i + 1) * total) // (2 * n) for i in range(n)]


# Sample times within this many frames below an integer are rounded up to it,
# so j * fr / rate = 4.9999999999 still selects frame 5.
SNAP = 1e-9


def fps_sample(meta: VideoMeta, rate: float, max_frames: int = 64) -> list[int]:
    """One frame every 1/rate seconds, falling back to uniform sampling past the cap."""
    if not rate > 0:
        raise ValueError(f"rate must be > 0, got {rate}")
    if max_frames < 1:
        raise ValueError(f"max_frames must be >= 1, got {max_frames}")
    # A clip shorter than one sampling period still yields its first frame.
    count = max(1, math.floor(meta.total_frames * rate / meta.frame_rate + SNAP))
    if rate >= meta.frame_rate:
        # Steps of at most one frame hit every index up to the last candidate.
        last = min(math.floor((count - 1) * meta.frame_rate / rate + SNAP), meta.total_frames - 1)
        if last + 1 > max_frames:
            return uniform_sample(meta, max_frames)
        return list(range(last + 1))
    raw = np.floor(np.arange(count, dtype=np.float64) * meta.frame_rate / rate + SNAP)
    indices = np.unique(np.minimum(raw.astype(np.int64), meta.total_frames - 1)).tolist()
    if len(indices) > max_frames:
        return uniform_sample(meta, max_frames)
    return indices


def sample(meta: VideoMeta, spec: SampleSpec) -> list[int]:
    if spec.mode == "uniform":
        return uniform_sample(meta, min(int(spec.target), spec.max_frames))
    return fps_sample(meta, spec.target, spec.max_frames)
