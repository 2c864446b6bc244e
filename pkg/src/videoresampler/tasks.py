"""Synthetic video tasks for desk-scale training.

Every token is seeded Gaussian noise.  Symbols are fixed seeded vectors
added onto one token of a chosen frame:

* ``recall`` - one symbol somewhere in the clip; the label is the symbol.
* ``order``  - two distinct symbols in two distinct frames; the label is the
  symbol that appears first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

TASK_KINDS = ("recall", "order")


@dataclass(frozen=True)
class SyntheticTask:
    kind: str = "recall"
    vocab: int = 4
    frames: int = 4
    tokens_per_frame: int = 4
    d_raw: int = 8
    noise: float = 1.0
    signal: float = 6.0
    symbol_seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigurationError(f"unknown task kind {self.kind!r}; expected one of {TASK_KINDS}")
        if self.vocab < 2:
            raise ConfigurationError(f"vocab must be >= 2, got {self.vocab}")
        if self.frames < 1 or self.tokens_per_frame < 1 or self.d_raw < 1:
            raise ConfigurationError("frames, tokens_per_frame and d_raw must be positive")
        if self.kind == "order" and self.frames < 2:
            raise ConfigurationError("order task needs at least 2 frames")

    @property
    def n_classes(self) -> int:
        return self.vocab

    @property
    def chance(self) -> float:
        """Accuracy of a predictor that ignores the input."""
        return 1.0 / self.vocab if self.kind == "recall" else 0.5

    def symbols(self) -> np.ndarray:
        """Unit-norm symbol vectors [vocab, d_raw], fixed by ``symbol_seed``."""
        v = np.random.default_rng([self.symbol_seed, 0x5EED]).normal(size=(self.vocab, self.d_raw))
        return v / np.linalg.norm(v, axis=1, keepdims=True)


# A placement is (symbol, frame, token).
Placement = tuple[int, int, int]


def label_for(kind: str, placements: list[Placement]) -> int:
    if kind == "recall":
        return placements[0][0]
    first = min(placements, key=lambda p: p[1])
    return first[0]


def render(task: SyntheticTask, placements: list[Placement], rng: np.random.Generator) -> np.ndarray:
    """One clip [N, T, d_raw]: noise plus each placed symbol."""
    x = rng.normal(scale=task.noise, size=(task.frames, task.tokens_per_frame, task.d_raw))
    emb = task.symbols()
    for sym, frame, tok in placements:
        x[frame, tok] += task.signal * emb[sym]
    return x


def _draw_placements(task: SyntheticTask, rng: np.random.Generator) -> list[Placement]:
    t = task.tokens_per_frame
    if task.kind == "recall":
        return [(int(rng.integers(task.vocab)), int(rng.integers(task.frames)), int(rng.integers(t)))]
    a, b = rng.choice(task.vocab, size=2, replace=False)
    fa, fb = rng.choice(task.frames, size=2, replace=False)
    return [(int(a), int(fa), int(rng.integers(t))), (int(b), int(fb), int(rng.integers(t)))]


def generate_task(task: SyntheticTask, seed, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` clips and labels; deterministic in ``seed``.

    Returns features [n, N, T, d_raw] and integer labels [n].
    """
    rng = np.random.default_rng(seed)
    xs = np.empty((n, task.frames, task.tokens_per_frame, task.d_raw))
    ys = np.empty(n, dtype=np.int64)
    for i in range(n):
        placements = _draw_placements(task, rng)
        xs[i] = render(task, placements, rng)
        ys[i] = label_for(task.kind, placements)
    return xs, ys
