"""Tensor dump/load.

File layout: one UTF-8 header line ``shape=[d0,d1,...] dtype=f32 order=row-major``
terminated by ``\\n``, then the raw little-endian float32 payload.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

_HEADER = re.compile(r"^shape=\[([0-9,]*)\] dtype=f32 order=row-major$")


class TensorFormatError(ValueError):
    pass


def format_header(shape) -> str:
    return f"shape=[{','.join(str(int(d)) for d in shape)}] dtype=f32 order=row-major"


def dumps(array) -> bytes:
    a = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    return format_header(a.shape).encode("utf-8") + b"\n" + a.tobytes(order="C")


def loads(blob: bytes) -> np.ndarray:
    head, sep, payload = blob.partition(b"\n")
    if not sep:
        raise TensorFormatError("missing header line")
    m = _HEADER.match(head.decode("utf-8"))
    if m is None:
        raise TensorFormatError(f"bad header: {head[:80]!r}")
    shape = tuple(int(d) for d in m.group(1).split(",") if d)
    n = int(np.prod(shape, dtype=np.int64))
    if len(payload) != 4 * n:
        raise TensorFormatError(f"payload has {len(payload)} bytes, header implies {4 * n}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)


def save(path, array) -> None:
    Path(path).write_bytes(dumps(array))


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())
