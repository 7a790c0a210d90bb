"""FTC1 tensor container: a tiny bit-exact binary format for dense arrays.

Layout (little-endian throughout):

    magic   4 bytes  b"FTC1"
    version u32      1
    dtype   u8       1 = float32, 2 = float64
    rank    u32
    dims    rank * u64
    payload row-major scalars
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FTC1"
VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class TensorFormatError(ValueError):
    """Raised for malformed FTC1 files."""


def write_tensor(path, array: np.ndarray):
    """Serialize a float32/float64 array; round-trips bit-exactly."""
    array = np.asarray(array)
    if array.dtype not in _DTYPE_CODES:
        array = array.astype(np.float64)
    code = _DTYPE_CODES[array.dtype]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IBI", VERSION, code, array.ndim))
        f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        f.write(np.ascontiguousarray(array).astype(array.dtype.newbyteorder("<")).tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    try:
        version, code, rank = struct.unpack_from("<IBI", raw, 4)
    except struct.error as e:
        raise TensorFormatError(f"{path}: truncated header") from e
    if version != VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    if code not in _CODE_DTYPES:
        raise TensorFormatError(f"{path}: unknown dtype code {code}")
    off = 4 + 9
    try:
        dims = struct.unpack_from(f"<{rank}Q", raw, off)
    except struct.error as e:
        raise TensorFormatError(f"{path}: truncated dims block") from e
    off += 8 * rank
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    need = count * dtype.itemsize
    if len(raw) - off < need:
        raise TensorFormatError(
            f"{path}: payload truncated ({len(raw) - off} bytes, need {need})")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=off)
    return data.reshape(dims).copy()
