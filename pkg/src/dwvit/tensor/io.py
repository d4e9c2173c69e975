"""Binary tensor files.

Layout: ``b"DWT0"``, one precision byte (0=F32, 1=F64), one rank byte,
``rank`` little-endian uint64 dims, then the row-major little-endian payload.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .core import Precision, Tensor

MAGIC = b"DWT0"


class TensorFormatError(ValueError):
    """A tensor file is truncated or malformed."""


def encode_tensor(t: Tensor) -> bytes:
    prec = t.precision
    header = MAGIC + struct.pack("<BB", prec.value, t.ndim) + struct.pack(f"<{t.ndim}Q", *t.shape)
    payload = np.ascontiguousarray(t.data, dtype=prec.dtype.newbyteorder("<")).tobytes()
    return header + payload


def decode_tensor(buf: bytes) -> Tensor:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise TensorFormatError("bad magic bytes, expected DWT0")
    tag, rank = buf[4], buf[5]
    try:
        prec = Precision(tag)
    except ValueError:
        raise TensorFormatError(f"unknown precision tag {tag}") from None
    if rank < 1:
        raise TensorFormatError("rank must be at least 1")
    dims_end = 6 + 8 * rank
    if len(buf) < dims_end:
        raise TensorFormatError("truncated header")
    shape = struct.unpack(f"<{rank}Q", buf[6:dims_end])
    if any(d < 1 for d in shape):
        raise TensorFormatError(f"non-positive dimension in {shape}")
    dtype = prec.dtype.newbyteorder("<")
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(buf) - dims_end != expected:
        raise TensorFormatError(f"payload has {len(buf) - dims_end} bytes, shape {shape} needs {expected}")
    arr = np.frombuffer(buf, dtype=dtype, offset=dims_end).astype(prec.dtype).reshape(shape)
    try:
        return Tensor.wrap(arr)
    except FloatingPointError as e:
        raise TensorFormatError(str(e)) from None


def save_tensor(path: str | os.PathLike, t: Tensor) -> None:
    with open(path, "wb") as f:
        f.write(encode_tensor(t))


def load_tensor(path: str | os.PathLike) -> Tensor:
    with open(path, "rb") as f:
        return decode_tensor(f.read())
