"""Flat little-endian tensor checkpoints.

Layout::

    b"ADFL"  u32 version  u32 count
    count x [ u32 name_len, name (utf-8), u32 rank, rank x u32 dims, f32 data ]
"""

from __future__ import annotations

import os
import struct
from typing import Iterable, Mapping

import numpy as np

MAGIC = b"ADFL"
VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointHeaderError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class DuplicateNameError(CheckpointError):
    pass


def encode_checkpoint(tensors: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]]) -> bytes:
    items = list(tensors.items()) if isinstance(tensors, Mapping) else list(tensors)
    seen = set()
    parts = [MAGIC, struct.pack("<II", VERSION, len(items))]
    for name, arr in items:
        if name in seen:
            raise DuplicateNameError(f"duplicate tensor name {name!r}")
        seen.add(name)
        arr = np.asarray(arr)
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"{name}: refusing to save non-finite values")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise CheckpointHeaderError(f"bad magic bytes {data[:4]!r}")
    if len(data) < 12:
        raise CheckpointTruncatedError("file shorter than header")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointHeaderError(f"unsupported version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointTruncatedError(f"need {n} bytes at offset {pos}, file has {len(data)}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
        if name in out:
            raise DuplicateNameError(f"duplicate tensor name {name!r}")
        out[name] = arr
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes after last entry")
    return out


def save_checkpoint(tensors, path: str | os.PathLike) -> None:
    blob = encode_checkpoint(tensors)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
