"""Independent GPCT tensor encoder for fixture dumps.

Layout: 4-byte magic "GPCT"; u8 version (1); u8 dtype code (1 = IEEE-754
binary32, little-endian); u8 rank; u8 pad (0); rank little-endian u32
dims; row-major payload. Kept separate from the consumer package's codec
so the two implementations cross-check the format in tests.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ExportError

MAGIC = b"GPCT"
VERSION = 1
DTYPE_F32 = 1

_HEADER = struct.Struct("<4sBBBB")


def encode(array) -> bytes:
    arr = np.ascontiguousarray(np.asarray(array), dtype="<f4")
    if any(d > 0xFFFFFFFF for d in arr.shape):
        raise ExportError("tensor dimension exceeds u32 range")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + dims + arr.tobytes(order="C")


def parse_header(data: bytes) -> tuple[int, int, tuple]:
    """Decode (version, dtype code, dims) from an encoded tensor."""
    if len(data) < _HEADER.size:
        raise ExportError("truncated GPCT header")
    magic, version, dtype_code, rank, pad = _HEADER.unpack_from(data, 0)
    if magic != MAGIC or pad != 0:
        raise ExportError("not a GPCT tensor")
    if len(data) < _HEADER.size + 4 * rank:
        raise ExportError(f"truncated dims (rank {rank})")
    dims = struct.unpack_from(f"<{rank}I", data, _HEADER.size)
    return version, dtype_code, dims
