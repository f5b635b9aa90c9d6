"""MCT1 tensor files.

Layout: magic ``MCT1``, one dtype byte (0 float32, 1 uint16, 2 uint8), one
rank byte, ``rank`` little-endian uint32 dims, then the row-major
little-endian payload.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"MCT1"
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<u2"), 2: np.dtype("u1")}


class TensorFormatError(ValueError):
    """Malformed MCT1 data; the message names the byte offset involved."""


def encode(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.dtype.kind == "f" and arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    code = next((c for c, dt in DTYPES.items() if arr.dtype == dt), None)
    if code is None:
        raise TypeError(f"unsupported dtype for MCT1: {arr.dtype}")
    if arr.ndim > 255:
        raise ValueError("rank must fit in one byte")
    head = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 6:
        raise TensorFormatError(f"header truncated: need at least 6 bytes, got {len(buf)}")
    if buf[:4] != MAGIC:
        raise TensorFormatError(f"bad magic at byte 0: {buf[:4]!r} (expected {MAGIC!r})")
    code, rank = buf[4], buf[5]
    if code not in DTYPES:
        raise TensorFormatError(f"unknown dtype code {code} at byte 4")
    dims_end = 6 + 4 * rank
    if len(buf) < dims_end:
        raise TensorFormatError(f"dims truncated: expected {dims_end} header bytes, got {len(buf)}")
    shape = struct.unpack(f"<{rank}I", buf[6:dims_end])
    if any(d == 0 for d in shape):
        bad = next(i for i, d in enumerate(shape) if d == 0)
        raise TensorFormatError(f"zero dimension at byte {6 + 4 * bad}")
    dtype = DTYPES[code]
    expected = dims_end + int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) != expected:
        raise TensorFormatError(
            f"payload size mismatch: expected {expected} bytes total, got {len(buf)} "
            f"(payload starts at byte {dims_end})")
    return np.frombuffer(buf, dtype=dtype, offset=dims_end).reshape(shape).astype(dtype.newbyteorder("="))


def save(path: str | os.PathLike, array: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode(array))


def load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    try:
        return decode(buf)
    except TensorFormatError as e:
        raise TensorFormatError(f"{os.fspath(path)}: {e}") from None
