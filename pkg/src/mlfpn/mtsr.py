"""Reader and writer for the MTSR binary tensor format.

Layout (all integers little-endian)::

    b"MTSR"  u32 version=1  u8 dtype=0 (float32)  u8 rank=4  rank x u32 dims
    payload: float32 little-endian, row-major in (n, c, h, w) order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from mlfpn.errors import FormatError

MAGIC = b"MTSR"
VERSION = 1
DTYPE_F32 = 0
RANK = 4
_HEADER = struct.Struct("<4sIBB")


def to_bytes(t: np.ndarray) -> bytes:
    if t.ndim != RANK:
        raise FormatError(f"MTSR stores rank-{RANK} tensors only, got shape {t.shape}")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, RANK) + struct.pack("<4I", *t.shape)
    return header + np.ascontiguousarray(t, dtype="<f4").tobytes()


def from_bytes(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError(f"{source}: truncated header ({len(buf)} bytes)")
    magic, version, dtype, rank = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{source}: unsupported dtype code {dtype} (only 0 = float32)")
    if rank != RANK:
        raise FormatError(f"{source}: rank {rank} tensor, expected rank {RANK}")
    off = _HEADER.size
    if len(buf) < off + 4 * rank:
        raise FormatError(f"{source}: truncated dimension list")
    dims = struct.unpack_from(f"<{rank}I", buf, off)
    off += 4 * rank
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) - off != 4 * count:
        raise FormatError(
            f"{source}: payload has {len(buf) - off} bytes, dims {dims} need {4 * count}"
        )
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=off)
    return data.astype(np.float32).reshape(dims)


def save(path, t: np.ndarray) -> None:
    Path(path).write_bytes(to_bytes(t))


def load(path) -> np.ndarray:
    path = Path(path)
    return from_bytes(path.read_bytes(), str(path))
