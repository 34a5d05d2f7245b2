"""Versioned binary checkpoints of named tensors plus a JSON metadata block.

Layout (little-endian)::

    b"PGCK" | u32 version | u32 meta_len | meta (utf-8 JSON) | u32 count
    count x [u16 name_len | name | u8 dtype (0=f32, 1=f64) | u8 ndim | ndim x u32 | data]
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PGCK"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict, meta: dict):
    buf = bytearray()
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    buf += MAGIC + struct.pack("<II", VERSION, len(meta_bytes)) + meta_bytes
    buf += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        raw_name = name.encode()
        buf += struct.pack("<H", len(raw_name)) + raw_name
        buf += struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path):
    """Return ``(tensors, meta)``."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint")
    try:
        version, meta_len = struct.unpack_from("<II", raw, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        off = 12
        meta = json.loads(raw[off:off + meta_len].decode())
        off += meta_len
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off:off + n].decode()
            off += n
            code, ndim = struct.unpack_from("<BB", raw, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", raw, off)
            off += 4 * ndim
            dtype = _DTYPES[code]
            size = int(np.prod(shape)) if ndim else 1
            if off + size * dtype.itemsize > len(raw):
                raise CheckpointError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(raw, dtype=dtype, count=size, offset=off).reshape(shape).copy()
            off += size * dtype.itemsize
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None
    return tensors, meta
