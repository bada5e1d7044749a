"""Binary container for named float64 tensors plus a JSON config snapshot.

Layout (all integers little-endian)::

    magic      8 bytes  b"CMPDIFF\\0"
    version    u32
    config     u32 length + UTF-8 JSON (sorted keys)
    count      u32
    per tensor u16 name length, name (UTF-8), u8 ndim, ndim x u64 dims,
               prod(dims) x float64 little-endian
    checksum   32 bytes, SHA-256 of everything above

Models and datasets share this format.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"CMPDIFF\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: Mapping[str, np.ndarray], config: Mapping | None = None) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = json.dumps(config or {}, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = np.array(value, dtype="<f8", order="C")
        key = name.encode("utf-8")
        parts += [struct.pack("<H", len(key)), key, struct.pack("<B", arr.ndim)]
        parts += [struct.pack(f"<{arr.ndim}Q", *arr.shape), arr.tobytes()]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def loads(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(blob) < len(MAGIC) + 32 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch; file is corrupt or truncated")
    pos = len(MAGIC)

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        out = struct.unpack_from(fmt, body, pos)
        pos += size
        return out

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (cfg_len,) = take("<I")
    config = json.loads(body[pos:pos + cfg_len].decode("utf-8"))
    pos += cfg_len
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = take("<H")
        name = body[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = take("<B")
        shape = take(f"<{ndim}Q")
        n = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(body, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(body):
        raise CheckpointError("trailing bytes after tensor table")
    return config, tensors


def save(path: str | Path, tensors: Mapping[str, np.ndarray], config: Mapping | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, config))


def load(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return loads(path.read_bytes())
