"""Single-file binary checkpoint container.

Layout (all integers little-endian)::

    magic          8 bytes   b"PRTRCKPT"
    version        u16
    config hash    16 bytes  ASCII hex
    meta length    u32, then that many bytes of UTF-8 JSON (config + extras)
    block count    u32
    per block:
      name length  u16, name (UTF-8)
      dtype code   u8        (0 = float32, 1 = float64, 2 = int64)
      ndim         u8, then ndim x u32 dims
      payload      prod(dims) * itemsize raw bytes
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"PRTRCKPT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, blocks: dict[str, np.ndarray], config_hash: str,
                    meta: dict[str, Any] | None = None) -> None:
    if len(config_hash) != 16:
        raise CheckpointError("config hash must be 16 hex characters")
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<H", VERSION), config_hash.encode("ascii"),
             struct.pack("<I", len(meta_bytes)), meta_bytes, struct.pack("<I", len(blocks))]
    for name, arr in blocks.items():
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8" if arr.dtype.itemsize == 8 else "<f4")
        elif arr.dtype.kind in "iub":
            arr = arr.astype("<i8")
        else:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for block {name}")
        nb = name.encode()
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<BB", _CODES[arr.dtype], arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape), np.ascontiguousarray(arr).tobytes()]
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], str, dict[str, Any]]:
    """Returns ``(blocks, config_hash, meta)``."""
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    off = 8
    (version,) = struct.unpack_from("<H", buf, off)
    off += 2
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    chash = buf[off:off + 16].decode("ascii")
    off += 16
    (mlen,) = struct.unpack_from("<I", buf, off)
    off += 4
    meta = json.loads(buf[off:off + mlen])
    off += mlen
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    blocks = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode()
        off += nlen
        code, ndim = struct.unpack_from("<BB", buf, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        dt = _DTYPES[code]
        n = int(np.prod(shape)) * dt.itemsize
        blocks[name] = np.frombuffer(buf, dtype=dt, count=int(np.prod(shape)), offset=off).reshape(shape).copy()
        off += n
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    return blocks, chash, meta
