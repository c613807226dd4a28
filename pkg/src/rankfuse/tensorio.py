"""Reader and writer for TNSR tensor files.

Layout, all little-endian::

    b"TNSR"  u8 version (=1)  u8 dtype  u8 rank  rank * u32 dims  payload

dtype 1 is float32, dtype 2 is float64. The payload is row-major.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"TNSR"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_FIXED_HEADER = len(MAGIC) + 3


def encode(array):
    array = np.asarray(array)
    code = _CODES.get(array.dtype.newbyteorder("=")) if array.dtype.kind == "f" else None
    if code is None:
        raise TypeError(f"unsupported dtype {array.dtype}; use float32 or float64")
    if array.ndim > 255:
        raise ValueError("rank must fit in one byte")
    header = MAGIC + struct.pack("<BBB", VERSION, code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype=DTYPES[code]).tobytes()
    return header + payload


def decode(buf):
    buf = bytes(buf)
    if len(buf) < _FIXED_HEADER:
        raise FormatError("truncated header", len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}", 0)
    version, code, rank = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}", 5)
    dims_end = _FIXED_HEADER + 4 * rank
    if len(buf) < dims_end:
        raise FormatError(f"truncated dims: rank {rank} needs {dims_end} header bytes", len(buf))
    shape = struct.unpack_from(f"<{rank}I", buf, _FIXED_HEADER)
    dtype = DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    available = len(buf) - dims_end
    if available < expected:
        raise FormatError(
            f"truncated payload: {expected // dtype.itemsize} elements declared, "
            f"{available // dtype.itemsize} present",
            len(buf),
        )
    if available > expected:
        raise FormatError(f"{available - expected} trailing bytes", dims_end + expected)
    data = np.frombuffer(buf, dtype=dtype, count=expected // dtype.itemsize, offset=dims_end)
    return data.reshape(shape).astype(dtype.newbyteorder("="))


def write(path, array):
    Path(path).write_bytes(encode(array))


def read(path):
    return decode(Path(path).read_bytes())
