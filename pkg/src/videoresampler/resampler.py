"""Learnable-query resampling of a frame-feature sequence.

Three methods share one set of weights (projection, query bank, position
table, attention layers):

* ``image`` - each frame is projected and resampled by its own slice of the
  query bank; the slices are concatenated.  Output count grows with frames.
* ``naive`` - frames are concatenated, projected, position-encoded, and all
  queries attend the whole sequence.  Output count is fixed.
* ``group`` - as ``naive``, but the sequence and the query bank are split
  into M contiguous groups and group i attends only span i.

The three are implemented as separate code paths (per-frame loop, single
attention, batched split attention) so that their degenerate cases can be
checked against each other as independent routes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError, PlanError
from .nn import CrossAttention, Linear, Module, PositionEncoding, apply_position_encoding, uniform_init
from .tensor import Tensor

Method = Literal["image", "naive", "group"]
METHODS: tuple[str, ...] = ("image", "naive", "group")


@dataclass(frozen=True)
class FeatureSequence:
    """Per-frame visual features, shape [N, T, d] or batched [B, N, T, d]."""

    data: Tensor

    def __post_init__(self):
        if not isinstance(self.data, Tensor):
            object.__setattr__(self, "data", Tensor(self.data))
        if self.data.ndim not in (3, 4):
            raise DimensionError(f"feature sequence must be [N,T,d] or [B,N,T,d], got {self.data.shape}")
        if self.frames < 1 or self.tokens_per_frame < 1:
            raise DimensionError(f"need at least one frame and one token, got {self.data.shape}")

    @property
    def frames(self) -> int:
        return self.data.shape[-3]

    @property
    def tokens_per_frame(self) -> int:
        return self.data.shape[-2]

    @property
    def dim(self) -> int:
        return self.data.shape[-1]

    @property
    def length(self) -> int:
        return self.frames * self.tokens_per_frame

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.data.shape[:-3]

    def frame(self, i: int) -> Tensor:
        return self.data[..., i, :, :]

    def concatenated(self) -> Tensor:
        """Frames joined in temporal order: [..., N*T, d]."""
        return self.data.reshape(*self.batch_shape, self.length, self.dim)


class QueryBank(Module):
    def __init__(self, total: int, d_model: int, rng: np.random.Generator):
        if total < 1:
            raise ConfigurationError(f"query bank needs at least one query, got {total}")
        self.total = total
        self.d_model = d_model
        self.queries = uniform_init(rng, (total, d_model), d_model)


@dataclass(frozen=True)
class GroupPlan:
    """Even split of ``total_queries`` queries and ``seq_len`` tokens into ``groups``.

    With ``tokens_per_frame`` given and ``align_frames`` set, spans must not
    straddle a frame boundary.
    """

    groups: int
    total_queries: int
    seq_len: int
    tokens_per_frame: int | None = None
    align_frames: bool = False

    def __post_init__(self):
        if self.groups < 1:
            raise PlanError(f"group count must be >= 1, got {self.groups}")
        if self.total_queries % self.groups:
            raise PlanError(
                f"total queries {self.total_queries} is not divisible by groups {self.groups}"
            )
        if self.seq_len % self.groups:
            raise PlanError(f"sequence length {self.seq_len} is not divisible by groups {self.groups}")
        if self.align_frames:
            t = self.tokens_per_frame
            if t is None:
                raise PlanError("align_frames requires tokens_per_frame")
            s = self.span
            if s % t and t % s:
                raise PlanError(f"span of {s} tokens straddles frames of {t} tokens")

    @classmethod
    def for_sequence(cls, groups: int, total_queries: int, frames: int, tokens_per_frame: int, align_frames: bool = False) -> "GroupPlan":
        return cls(groups, total_queries, frames * tokens_per_frame, tokens_per_frame, align_frames)

    @property
    def queries_per_group(self) -> int:
        return self.total_queries // self.groups

    @property
    def span(self) -> int:
        return self.seq_len // self.groups

    def query_ranges(self) -> list[tuple[int, int]]:
        q = self.queries_per_group
        return [(i * q, (i + 1) * q) for i in range(self.groups)]

    def span_ranges(self) -> list[tuple[int, int]]:
        s = self.span
        return [(i * s, (i + 1) * s) for i in range(self.groups)]


@dataclass(frozen=True)
class TokenBudget:
    method: str
    frames: int
    tokens_in: int
    queries_out_count: int


def token_budget(method: str, frames: int, tokens_per_frame: int, total_queries: int = 0, per_frame_queries: int = 0) -> TokenBudget:
    """Number of visual tokens a method hands downstream.

    Image-level output scales with frame count; both video-level methods emit
    exactly ``total_queries`` whatever the frame count.
    """
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}")
    if frames < 1 or tokens_per_frame < 1:
        raise ConfigurationError("frame and token counts must be positive")
    if method == "image":
        if per_frame_queries < 1:
            raise ConfigurationError("image-level budget needs per_frame_queries >= 1")
        out = frames * per_frame_queries
    else:
        if total_queries < 1:
            raise ConfigurationError("video-level budget needs total_queries >= 1")
        out = total_queries
    return TokenBudget(method, frames, frames * tokens_per_frame, out)


def budget_table(frame_counts, tokens_per_frame: int, total_queries: int, per_frame_queries: int) -> list[dict]:
    """Side-by-side budgets of every method over a range of frame counts."""
    rows = []
    for n in frame_counts:
        row = {"frames": n, "tokens_in": n * tokens_per_frame}
        for m in METHODS:
            row[m] = token_budget(m, n, tokens_per_frame, total_queries, per_frame_queries).queries_out_count
        rows.append(row)
    return rows


@dataclass
class ResampledOutput:
    queries_out: Tensor  # [..., Q, d_model]
    attention: np.ndarray | None  # head-mean [..., Q, L]
    budget: TokenBudget
    method: str
    query_ranges: list[tuple[int, int]]  # query block i attends token span i
    span_ranges: list[tuple[int, int]]
    frame_ranges: list[tuple[int, int]] = field(default_factory=list)
    head_attention: np.ndarray | None = None  # [..., heads, Q, L]


@dataclass(frozen=True)
class ResamplerConfig:
    method: str = "group"
    d_vis: int = 16
    d_model: int = 16
    total_queries: int = 8
    groups: int = 2
    heads: int = 1
    depth: int = 1
    pe: str = "learned"
    max_len: int = 256
    projections: bool = True
    align_frames: bool = False
    retain_attention: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.depth < 1:
            raise ConfigurationError(f"depth must be >= 1, got {self.depth}")
        if self.heads < 1 or self.d_model % self.heads:
            raise ConfigurationError(f"d_model {self.d_model} is not divisible by heads {self.heads}")


class Resampler(Module):
    """Projection + query bank + position table + stacked cross-attention.

    Layers are chained: layer k's queries are layer k-1's outputs, all
    attending the same projected tokens.  Reported attention is the last
    layer's.
    """

    def __init__(self, config: ResamplerConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = np.random.default_rng(config.seed) if rng is None else rng
        self.proj = Linear(config.d_vis, config.d_model, rng)
        self.bank = QueryBank(config.total_queries, config.d_model, rng)
        self.pe = PositionEncoding(config.pe, config.max_len, config.d_model)
        self.layers = [CrossAttention(config.d_model, rng, config.heads, config.projections) for _ in range(config.depth)]

    def attend(self, queries: Tensor, keys: Tensor):
        res = None
        for layer in self.layers:
            res = layer(queries, keys)
            queries = res.out
        return res

    def plan_for(self, seq: FeatureSequence) -> GroupPlan:
        c = self.config
        return GroupPlan.for_sequence(c.groups, c.total_queries, seq.frames, seq.tokens_per_frame, c.align_frames)

    def __call__(self, seq: FeatureSequence, method: str | None = None) -> ResampledOutput:
        method = method or self.config.method
        if method == "image":
            if self.bank.total % seq.frames:
                raise PlanError(f"{self.bank.total} queries cannot be split evenly over {seq.frames} frames")
            out = image_level_resample(seq, self, self.bank.total // seq.frames)
        elif method == "naive":
            out = naive_video_resample(seq, self)
        elif method == "group":
            out = group_resample(seq, self, self.plan_for(seq))
        else:
            raise ConfigurationError(f"unknown method {method!r}")
        if not self.config.retain_attention:
            out.attention = None
            out.head_attention = None
        return out


def _frame_ranges(seq: FeatureSequence) -> list[tuple[int, int]]:
    t = seq.tokens_per_frame
    return [(i * t, (i + 1) * t) for i in range(seq.frames)]


def _check_dims(seq: FeatureSequence, lin: Linear) -> None:
    if seq.dim != lin.d_in:
        raise ConfigurationError(f"projection expects {lin.d_in}-dim features, sequence has {seq.dim}")


def project(seq: FeatureSequence, lin: Linear) -> Tensor:
    """Concatenate frames in temporal order, then map d_vis -> d_model: [..., L, d_model]."""
    _check_dims(seq, lin)
    return lin(seq.concatenated())


def _scatter_blocks(blocks: np.ndarray, lead: tuple[int, ...], q_ranges, s_ranges, length: int) -> np.ndarray:
    """Place per-group maps ``blocks`` [..., G, q, s] into a zero [..., Q, L] map."""
    total = q_ranges[-1][1]
    full = np.zeros(lead + (total, length))
    for g, ((q0, q1), (s0, s1)) in enumerate(zip(q_ranges, s_ranges)):
        full[..., q0:q1, s0:s1] = blocks[..., g, :, :]
    return full


def image_level_resample(seq: FeatureSequence, resampler: Resampler, per_frame_queries: int) -> ResampledOutput:
    """Resample each frame with its own query slice; concatenate in frame order.

    No position encoding is applied on this path.
    """
    n, t = seq.frames, seq.tokens_per_frame
    bank = resampler.bank
    if bank.total != n * per_frame_queries:
        raise PlanError(
            f"image-level resampling needs {n} frames x {per_frame_queries} queries = "
            f"{n * per_frame_queries}, bank holds {bank.total}"
        )
    _check_dims(seq, resampler.proj)
    outs, maps, head_maps = [], [], []
    for i in range(n):
        keys = resampler.proj(seq.frame(i))
        q_i = bank.queries[i * per_frame_queries : (i + 1) * per_frame_queries]
        res = resampler.attend(q_i, keys)
        outs.append(res.out)
        maps.append(res.weights)
        head_maps.append(res.head_weights)
    q_ranges = [(i * per_frame_queries, (i + 1) * per_frame_queries) for i in range(n)]
    frames = _frame_ranges(seq)
    lead = seq.batch_shape
    attention = _scatter_blocks(np.stack(maps, axis=-3), lead, q_ranges, frames, seq.length)
    heads = resampler.config.heads
    head_blocks = np.stack(head_maps, axis=-3)  # [..., heads, N, p, T]
    head_attention = _scatter_blocks(head_blocks, lead + (heads,), q_ranges, frames, seq.length)
    return ResampledOutput(
        queries_out=T.concat(outs, axis=-2),
        attention=attention,
        budget=token_budget("image", n, t, per_frame_queries=per_frame_queries),
        method="image",
        query_ranges=q_ranges,
        span_ranges=frames,
        frame_ranges=frames,
        head_attention=head_attention,
    )


def naive_video_resample(seq: FeatureSequence, resampler: Resampler) -> ResampledOutput:
    """All queries attend the full position-encoded sequence."""
    keys = apply_position_encoding(project(seq, resampler.proj), resampler.pe)
    res = resampler.attend(resampler.bank.queries, keys)
    total = resampler.bank.total
    return ResampledOutput(
        queries_out=res.out,
        attention=res.weights,
        budget=token_budget("naive", seq.frames, seq.tokens_per_frame, total_queries=total),
        method="naive",
        query_ranges=[(0, total)],
        span_ranges=[(0, seq.length)],
        frame_ranges=_frame_ranges(seq),
        head_attention=res.head_weights,
    )


def group_resample(seq: FeatureSequence, resampler: Resampler, plan: GroupPlan) -> ResampledOutput:
    """Split sequence and queries into aligned groups; group i attends span i only."""
    if plan.seq_len != seq.length:
        raise PlanError(f"plan covers {plan.seq_len} tokens, sequence has {seq.length}")
    bank = resampler.bank
    if plan.total_queries != bank.total:
        raise PlanError(f"plan covers {plan.total_queries} queries, bank holds {bank.total}")
    keys = apply_position_encoding(project(seq, resampler.proj), resampler.pe)
    lead = seq.batch_shape
    m, q, s = plan.groups, plan.queries_per_group, plan.span
    d = resampler.config.d_model
    split_keys = keys.reshape(*lead, m, s, d)
    split_queries = bank.queries.reshape(m, q, d)
    res = resampler.attend(split_queries, split_keys)
    out = res.out.reshape(*lead, m * q, d)
    q_ranges, s_ranges = plan.query_ranges(), plan.span_ranges()
    attention = _scatter_blocks(res.weights, lead, q_ranges, s_ranges, seq.length)
    head_blocks = np.moveaxis(res.head_weights, -3, -4)  # [..., heads, M, q, s]
    head_attention = _scatter_blocks(head_blocks, lead + (resampler.config.heads,), q_ranges, s_ranges, seq.length)
    return ResampledOutput(
        queries_out=out,
        attention=attention,
        budget=token_budget("group", seq.frames, seq.tokens_per_frame, total_queries=bank.total),
        method="group",
        query_ranges=q_ranges,
        span_ranges=s_ranges,
        frame_ranges=_frame_ranges(seq),
        head_attention=head_attention,
    )
