"""Flat binary parameter checkpoints.

Layout (little-endian)::

    b"TLVR"  u32 version
    repeated until EOF:
        u32 name_len, name (UTF-8), u32 rank, rank x u64 extents,
        prod(extents) x f64 payload
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"TLVR"
VERSION = 1


def encode_checkpoint(state: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for name, value in state.items():
        arr = np.array(value, dtype="<f8", order="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    if len(buf) < 8:
        raise FormatError("truncated checkpoint header", len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", 0)
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    pos = 8
    state: dict[str, np.ndarray] = {}

    def need(n: int, what: str) -> None:
        if pos + n > len(buf):
            raise FormatError(f"truncated {what}", pos)

    while pos < len(buf):
        need(4, "name length")
        (name_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        need(name_len, "name")
        try:
            name = buf[pos : pos + name_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("parameter name is not valid UTF-8", pos) from exc
        pos += name_len
        need(4, "rank")
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        need(8 * rank, "extents")
        shape = struct.unpack_from(f"<{rank}Q", buf, pos)
        pos += 8 * rank
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        need(8 * count, f"payload of {name!r}")
        state[name] = np.reshape(np.frombuffer(buf, dtype="<f8", count=count, offset=pos), shape).astype(np.float64)
        pos += 8 * count
    return state


def save_checkpoint(path: str | os.PathLike, state: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_checkpoint(state))


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())
