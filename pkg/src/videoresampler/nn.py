"""Layers built on :mod:`videoresampler.tensor`: linear maps, position tables,
and multi-head scaled dot-product cross-attention."""

from __future__ import annotations

import math
from typing import Iterator, NamedTuple

import numpy as np

from . import tensor as T
from .errors import CapacityError, ConfigurationError, DimensionError
from .tensor import Parameter, Tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape))


class Module:
    """Minimal parameter container.

    Parameters are discovered from instance attributes in definition order:
    ``Parameter`` leaves, sub-``Module``s, and lists of ``Module``.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        seen: set[int] = set()
        for name, p in self._walk(prefix):
            if id(p) in seen:
                raise ConfigurationError(f"parameter {name!r} is registered more than once")
            seen.add(id(p))
            yield name, p

    def _walk(self, prefix: str):
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value._walk(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._walk(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise ConfigurationError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {value.shape} != parameter shape {p.shape}")
            p.data = value.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag and not p.permanently_frozen


class Linear(Module):
    """``y = x @ weight + bias`` with ``weight`` of shape [d_in, d_out]."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        if d_in < 1 or d_out < 1:
            raise ConfigurationError(f"Linear dims must be positive, got {d_in}->{d_out}")
        self.d_in = d_in
        self.d_out = d_out
        self.weight = uniform_init(rng, (d_in, d_out), d_in)
        self.bias = uniform_init(rng, (d_out,), d_in) if bias else None

    @classmethod
    def identity(cls, d: int) -> "Linear":
        lin = cls.__new__(cls)
        lin.d_in = lin.d_out = d
        lin.weight = Parameter(np.eye(d))
        lin.bias = Parameter(np.zeros(d))
        return lin

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ConfigurationError(f"Linear expects trailing dim {self.d_in}, got {x.shape}")
        y = T.matmul(x, self.weight) if x.ndim >= 2 else T.matmul(x.reshape(1, -1), self.weight).reshape(-1)
        return y + self.bias if self.bias is not None else y


PE_KINDS = ("learned", "sinusoidal", "none")


def sinusoidal_table(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(0, d, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / d)
    table = np.zeros((max_len, d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d // 2])
    return table


class PositionEncoding(Module):
    """Additive position table.

    ``learned`` tables start at zero so that a fresh table is a no-op;
    ``sinusoidal`` tables are fixed; ``none`` adds nothing.
    """

    def __init__(self, kind: str, max_len: int, d: int):
        if kind not in PE_KINDS:
            raise ConfigurationError(f"unknown position encoding kind {kind!r}; expected one of {PE_KINDS}")
        self.kind = kind
        self.max_len = max_len
        self.d = d
        if kind == "learned":
            self.table = Parameter(np.zeros((max_len, d)))
        elif kind == "sinusoidal":
            self.table = Tensor(sinusoidal_table(max_len, d))
        else:
            self.table = None


def apply_position_encoding(x: Tensor, pe: PositionEncoding) -> Tensor:
    """Add the first L rows of the table to ``x`` of shape [..., L, d]."""
    if pe.kind == "none":
        return x
    length = x.shape[-2]
    if length > pe.max_len:
        raise CapacityError(f"sequence length {length} exceeds position table capacity {pe.max_len}")
    if x.shape[-1] != pe.d:
        raise DimensionError(f"position table width {pe.d} != feature width {x.shape[-1]}")
    return x + pe.table[:length]


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax (max-subtracted) over the last axis."""
    return T.softmax(x, axis=-1)


class AttentionResult(NamedTuple):
    out: Tensor
    weights: np.ndarray  # head-mean [..., nq, nk]
    head_weights: np.ndarray  # [..., heads, nq, nk]


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    return x.reshape(*lead, n, heads, d // heads).swapaxes(-2, -3)


def cross_attention(q: Tensor, k: Tensor, v: Tensor, heads: int = 1) -> AttentionResult:
    """Scaled dot-product attention of ``q`` [..., nq, d] over ``k, v`` [..., nk, d].

    Each head sees a d/heads slice and is scaled by 1/sqrt(d/heads).  The
    returned weights are averaged over heads.
    """
    d = q.shape[-1]
    if k.shape[-1] != d or v.shape[-1] != d:
        raise DimensionError(f"q/k/v widths differ: {q.shape}, {k.shape}, {v.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"k and v lengths differ: {k.shape} vs {v.shape}")
    if heads < 1 or d % heads:
        raise ConfigurationError(f"width {d} is not divisible by heads={heads}")
    dh = d // heads
    if heads == 1:
        scores = T.matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
        attn = softmax_rows(scores)
        out = T.matmul(attn, v)
        return AttentionResult(out, attn.data, attn.data[..., None, :, :])
    qh, kh, vh = (_split_heads(t, heads) for t in (q, k, v))
    scores = T.matmul(qh, kh.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
    attn = softmax_rows(scores)
    oh = T.matmul(attn, vh).swapaxes(-2, -3)
    out = oh.reshape(*oh.shape[:-2], d)
    return AttentionResult(out, attn.data.mean(axis=-3), attn.data)


class CrossAttention(Module):
    """Learnable-query cross-attention block with q/k/v/output projections.

    With ``projections=False`` the block reduces to the bare kernel, which is
    what the hand-computed oracles use.
    """

    def __init__(self, d: int, rng: np.random.Generator, heads: int = 1, projections: bool = True):
        if heads < 1 or d % heads:
            raise ConfigurationError(f"width {d} is not divisible by heads={heads}")
        self.d = d
        self.heads = heads
        self.projections = projections
        if projections:
            self.wq = Linear(d, d, rng)
            self.wk = Linear(d, d, rng)
            self.wv = Linear(d, d, rng)
            self.wo = Linear(d, d, rng)

    def __call__(self, queries: Tensor, keys: Tensor) -> AttentionResult:
        if not self.projections:
            return cross_attention(queries, keys, keys, self.heads)
        res = cross_attention(self.wq(queries), self.wk(keys), self.wv(keys), self.heads)
        return AttentionResult(self.wo(res.out), res.weights, res.head_weights)
