"""Named-tensor checkpoints.

Layout (little-endian)::

    b"RGCK"  u16 version=1  u32 tensor count
    count x [ u16 name length | name utf-8 | u32 rows | u32 cols | rows*cols x f32 ]

Tensors are written in mapping order, so dumping a loaded checkpoint
reproduces the original bytes.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError, NumericalError

MAGIC = b"RGCK"
VERSION = 1
_HEADER = struct.Struct("<4sHI")


def dump_checkpoint(tensors: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise FormatError(f"tensor {name!r} has {arr.ndim} dimensions; checkpoints hold 2-D tensors")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<II", *arr.shape))
        with np.errstate(over="ignore"):
            data = np.ascontiguousarray(arr, dtype="<f4")
        if not np.all(np.isfinite(data)):
            raise NumericalError(f"tensor {name!r} has values that are not finite in float32")
        buf.write(data.tobytes())
    return buf.getvalue()


def parse_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    if len(data) < _HEADER.size:
        raise FormatError("file too short for an RGCK header")
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported RGCK version {version}")
    out: dict[str, np.ndarray] = {}
    pos = _HEADER.size
    for k in range(count):
        try:
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + nlen].decode("utf-8")
            pos += nlen
            rows, cols = struct.unpack_from("<II", data, pos)
            pos += 8
        except (struct.error, UnicodeDecodeError) as exc:
            raise FormatError(f"tensor {k}: malformed header ({exc})") from None
        size = rows * cols
        if pos + 4 * size > len(data):
            raise FormatError(f"tensor {name!r}: truncated data")
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}")
        out[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(rows, cols).astype(np.float32)
        pos += 4 * size
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after {count} tensors")
    return out


def save_checkpoint(tensors: Mapping[str, np.ndarray], path: str | Path) -> None:
    Path(path).write_bytes(dump_checkpoint(tensors))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    return parse_checkpoint(Path(path).read_bytes())
