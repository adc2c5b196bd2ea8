"""GEMF container: a table of named float32 arrays.

Layout, little-endian::

    b"GEMF"  u32 version  u32 count
    count x ( u32 name_len, name (UTF-8), u32 rank, rank x u32 extent, f32 payload )

Integers and text are stored through the f32 payload: integers below 2**24
as themselves, larger ones as 16-bit limbs, text as its UTF-8 bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .signal_io import DataError

MAGIC = b"GEMF"
VERSION = 1
_EXACT = 1 << 24


class CheckpointError(DataError):
    def __init__(self, path, offset: int | None, message: str):
        self.path = str(path)
        self.offset = offset
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{path}{where}: {message}")


def write_arrays(path, arrays: dict) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        data = arr.astype("<f4")
        if arr.dtype.kind in "iub" and np.any(data.astype(np.int64) != arr):
            raise ValueError(f"array '{name}' has integers not exactly representable as f32")
        enc = name.encode("utf-8")
        parts.append(struct.pack("<I", len(enc)) + enc)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(data.tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def read_arrays(path) -> dict:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(path, None, "no such checkpoint") from None
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(path, len(data), f"truncated {what}")
        out = data[pos:pos + n]
        pos += n
        return out

    if take(4, "magic") != MAGIC:
        raise CheckpointError(path, 0, "bad magic (not a GEMF checkpoint)")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise CheckpointError(path, 4, f"unsupported format version {version}")
    out = {}
    for _ in range(count):
        start = pos
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        try:
            name = take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(path, start + 4, "array name is not UTF-8") from None
        (rank,) = struct.unpack("<I", take(4, "rank"))
        if rank > 16:
            raise CheckpointError(path, pos - 4, f"implausible rank {rank}")
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "extents"))
        n = int(np.prod(shape)) if rank else 1
        out[name] = np.frombuffer(take(4 * n, f"payload of '{name}'"), "<f4").reshape(shape).astype(np.float32)
    if pos != len(data):
        raise CheckpointError(path, pos, "trailing bytes after last array")
    return out


def encode_int(value: int, limbs: int = 4) -> np.ndarray:
    """Non-negative integer as ``limbs`` 16-bit limbs, least significant first."""
    if value < 0 or value >= 1 << (16 * limbs):
        raise ValueError(f"{value} does not fit in {limbs} 16-bit limbs")
    return np.array([(value >> (16 * i)) & 0xFFFF for i in range(limbs)], np.float32)


def decode_int(arr) -> int:
    return sum(int(v) << (16 * i) for i, v in enumerate(np.asarray(arr)))


def encode_text(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), np.uint8).astype(np.float32)


def decode_text(arr) -> str:
    return bytes(np.asarray(arr).astype(np.uint8)).decode("utf-8")


def encode_json(obj) -> np.ndarray:
    return encode_text(json.dumps(obj, sort_keys=True))


def decode_json(arr):
    return json.loads(decode_text(arr))
