"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    b"PDAE"                   magic
    u32 version               currently 1
    u32 n, n bytes            JSON metadata (UTF-8, sorted keys)
    u32 n_layers              then per layer:
        u8 kind, u8 stride, u32 in_channels, u32 out_channels, u32 units
    u32 n_tensors             then per tensor, in declaration order:
        u8 ndim, ndim x u32 dims, prod(dims) x float64
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .layers import KINDS, LayerSpec
from .tensor import Tensor

MAGIC = b"PDAE"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(specs, tensors, meta: dict | None = None) -> bytes:
    meta_bytes = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(meta_bytes)), meta_bytes]
    parts.append(struct.pack("<I", len(specs)))
    for s in specs:
        parts.append(struct.pack("<BBIII", KINDS.index(s.kind), s.stride, s.in_channels, s.out_channels, s.units))
    parts.append(struct.pack("<I", len(tensors)))
    for t in tensors:
        data = t.data if isinstance(t, Tensor) else np.asarray(t)
        parts.append(struct.pack("<B", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(np.ascontiguousarray(data, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf: bytes):
    """Return ``(specs, arrays, meta)``."""
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a PDAE checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n_meta,) = r.unpack("<I")
    meta = json.loads(r.take(n_meta).decode("utf-8"))
    (n_layers,) = r.unpack("<I")
    specs = []
    for _ in range(n_layers):
        kind, stride, cin, cout, units = r.unpack("<BBIII")
        if kind >= len(KINDS):
            raise CheckpointError(f"unknown layer kind code {kind}")
        specs.append(LayerSpec(KINDS[kind], stride, cin, cout, units))
    (n_tensors,) = r.unpack("<I")
    arrays = []
    for _ in range(n_tensors):
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape, dtype=np.int64))
        arrays.append(np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64))
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return specs, arrays, meta


def save(path, specs, tensors, meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(specs, tensors, meta))


def load(path):
    return loads(Path(path).read_bytes())
