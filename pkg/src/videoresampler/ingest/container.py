"""Deterministic stand-in for decoded video: a little-endian binary container.

Header (28 bytes): b"TLVV", u32 version, u32 total_frames, f64 frame_rate,
u32 tokens_per_frame, u32 d_vis.  Payload: total_frames * T * d_vis f64.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .sampling import VideoMeta

MAGIC = b"TLVV"
VERSION = 1
_HEADER = struct.Struct("<4sIIdII")


def encode_video(frames: np.ndarray, frame_rate: float) -> bytes:
    frames = np.asarray(frames, dtype="<f8")
    if frames.ndim != 3 or 0 in frames.shape:
        raise ValueError(f"frames must be a non-empty [frames, T, d_vis] array, got {frames.shape}")
    if not frame_rate > 0:
        raise ValueError(f"frame_rate must be > 0, got {frame_rate}")
    n, t, d = frames.shape
    return _HEADER.pack(MAGIC, VERSION, n, float(frame_rate), t, d) + frames.tobytes(order="C")


def decode_video(buf: bytes) -> tuple[VideoMeta, np.ndarray]:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}", 0)
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header", len(buf))
    _, version, n, rate, t, d = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}", 4)
    if n < 1:
        raise FormatError("container holds no frames", 8)
    if not (rate > 0 and np.isfinite(rate)):
        raise FormatError(f"invalid frame rate {rate!r}", 12)
    if t < 1 or d < 1:
        raise FormatError(f"invalid frame shape T={t}, d_vis={d}", 20)
    expected = _HEADER.size + 8 * n * t * d
    if len(buf) < expected:
        raise FormatError(f"truncated payload: need {expected} bytes, have {len(buf)}", len(buf))
    if len(buf) > expected:
        raise FormatError(f"{len(buf) - expected} trailing bytes after payload", expected)
    frames = np.frombuffer(buf, dtype="<f8", count=n * t * d, offset=_HEADER.size)
    return VideoMeta(n, rate), frames.reshape(n, t, d).astype(np.float64)


def write_video(path: str | os.PathLike, frames: np.ndarray, frame_rate: float) -> None:
    Path(path).write_bytes(encode_video(frames, frame_rate))


def read_video(path: str | os.PathLike) -> tuple[VideoMeta, np.ndarray]:
    return decode_video(Path(path).read_bytes())


def read_meta(path: str | os.PathLike) -> VideoMeta:
    """Header-only read; payload length is still validated against the file size."""
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(_HEADER.size)
    size = path.stat().st_size
    if len(head) < 4 or head[:4] != MAGIC:
        raise FormatError(f"bad magic {head[:4]!r}, expected {MAGIC!r}", 0)
    if len(head) < _HEADER.size:
        raise FormatError("truncated header", len(head))
    _, version, n, rate, t, d = _HEADER.unpack(head)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}", 4)
    expected = _HEADER.size + 8 * n * t * d
    if size < expected:
        raise FormatError(f"truncated payload: need {expected} bytes, have {size}", size)
    try:
        return VideoMeta(n, rate)
    except ValueError as exc:
        raise FormatError(str(exc), 8) from exc
