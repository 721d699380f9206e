"""CCKP1 parameter checkpoints.

Layout (little-endian)::

    b"CCKP1\\n"  u32 count
    repeated count times:
        u32 name_len, name bytes (utf-8), u32 rank, rank x u32 extents, float64 payload
"""
from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

from ..errors import BadMagicError, FormatError

MAGIC = b"CCKP1\n"


def encode_checkpoint(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"tensor {name!r} has non-finite values")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> dict[str, np.ndarray]:
    if not blob.startswith(MAGIC):
        raise BadMagicError("not a CCKP1 checkpoint")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError("truncated checkpoint")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"tensor {name!r} has non-finite values")
        out[name] = arr
    if pos != len(blob):
        raise FormatError("trailing bytes after checkpoint payload")
    return out


def save_checkpoint(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(tensors))


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
