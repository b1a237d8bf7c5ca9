"""HOT1 binary tensor files.

Layout (all little-endian)::

    b"HOT1" | dtype u8 (0=f32, 1=f64) | ndim u8 (=2) | 2 zero bytes
    | ndim x u64 dims | row-major payload
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .core import TensorFormatError, as_matrix

MAGIC = b"HOT1"
_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
HEADER_SIZE = 8


def encode_tensor(matrix) -> bytes:
    a = as_matrix(matrix, name="tensor")
    code = _DTYPE_TO_CODE[a.dtype]
    header = MAGIC + struct.pack("<BBxx", code, 2) + struct.pack("<2Q", *a.shape)
    return header + a.astype(_CODE_TO_DTYPE[code], copy=False).tobytes(order="C")


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < HEADER_SIZE or buf[:4] != MAGIC:
        raise TensorFormatError("bad magic")
    code, ndim = struct.unpack_from("<BB", buf, 4)
    if code not in _CODE_TO_DTYPE:
        raise TensorFormatError(f"bad dtype byte {code}")
    if ndim != 2:
        raise TensorFormatError(f"unsupported ndim {ndim}")
    dims_end = HEADER_SIZE + 8 * ndim
    if len(buf) < dims_end:
        raise TensorFormatError("truncated header")
    rows, cols = struct.unpack_from("<2Q", buf, HEADER_SIZE)
    dtype = _CODE_TO_DTYPE[code]
    if len(buf) - dims_end != rows * cols * dtype.itemsize:
        raise TensorFormatError("payload length mismatch")
    a = np.frombuffer(buf, dtype=dtype, offset=dims_end).reshape(rows, cols)
    if not np.all(np.isfinite(a)):
        raise TensorFormatError("non-finite values in payload")
    return a.astype(dtype.newbyteorder("="), copy=True)


def write_tensor(path: str | os.PathLike, matrix) -> None:
    with open(path, "wb") as f:
        f.write(encode_tensor(matrix))


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_tensor(f.read())
