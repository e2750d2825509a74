"""Portable binary checkpoint for :class:`PolicyParameters`.

Layout (all little-endian)::

    b"S2RB"  u16 version
    u32 actor layer count, then per layer: u32 rows, u32 cols, rows*cols f64
    u32 rows=1, u32 cols=2, 2 f64            # log_std
    u32 critic layer count, then layers as above
    u32 CRC32 of every preceding byte

A layer is stored as one ``(fan_in + 1, fan_out)`` matrix: the weight rows
followed by the bias row.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from pathlib import Path
from typing import List

import numpy as np

from ..errors import CheckpointError, ShapeError
from .policy import PolicyParameters

MAGIC = b"S2RB"
VERSION = 1


def _pack_matrix(m: np.ndarray) -> bytes:
    m = np.ascontiguousarray(m, dtype="<f8")
    return struct.pack("<II", *m.shape) + m.tobytes()


def _pack_layers(layers) -> bytes:
    out = [struct.pack("<I", len(layers))]
    for w, b in layers:
        out.append(_pack_matrix(np.vstack([w, b[None, :]])))
    return b"".join(out)


def to_bytes(params: PolicyParameters) -> bytes:
    body = b"".join([
        MAGIC, struct.pack("<H", VERSION),
        _pack_layers(params.actor),
        _pack_matrix(params.log_std[None, :]),
        _pack_layers(params.critic),
    ])
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def matrix(self) -> np.ndarray:
        rows, cols = self.u32(), self.u32()
        if rows * cols > 1 << 24:
            raise CheckpointError(f"implausible matrix shape {rows}x{cols}")
        return np.frombuffer(self.take(8 * rows * cols), dtype="<f8").reshape(rows, cols).astype(float)

    def layers(self) -> List:
        count = self.u32()
        if count > 64:
            raise CheckpointError(f"implausible layer count {count}")
        out = []
        for _ in range(count):
            m = self.matrix()
            if m.shape[0] < 2:
                raise CheckpointError("layer matrix lacks a bias row")
            out.append((m[:-1].copy(), m[-1].copy()))
        return out


def from_bytes(data: bytes) -> PolicyParameters:
    if len(data) < 10 or data[:4] != MAGIC:
        raise CheckpointError("not an S2RB checkpoint")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    r = _Reader(body)
    r.take(4)
    (version,) = struct.unpack("<H", r.take(2))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    actor = r.layers()
    log_std = r.matrix()
    critic = r.layers()
    if r.pos != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    if log_std.shape[0] != 1:
        raise CheckpointError(f"log_std block has shape {log_std.shape}")
    params = PolicyParameters(actor, log_std[0].copy(), critic)
    try:
        params.validate()
    except ShapeError as exc:
        raise CheckpointError(f"inconsistent layer shapes: {exc}") from None
    return params


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(params: PolicyParameters, path) -> None:
    atomic_write_bytes(path, to_bytes(params))


def load(path) -> PolicyParameters:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return from_bytes(data)
