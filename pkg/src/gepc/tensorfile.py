"""Reading and writing GPCT tensor files.

Layout: 4-byte magic "GPCT"; u8 version (1); u8 dtype code (1 = IEEE-754
binary32, little-endian, the only defined code); u8 rank; u8 pad (0); rank
little-endian u32 dims; row-major payload. Round-trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import BackendError, InvalidInputError

MAGIC = b"GPCT"
VERSION = 1
DTYPE_F32 = 1

_HEADER = struct.Struct("<4sBBBB")


def tensor_to_bytes(array) -> bytes:
    arr = np.asarray(array)
    if arr.dtype == object or arr.dtype.kind in "USV":
        raise InvalidInputError(f"cannot encode dtype {arr.dtype} as f32")
    arr = arr.astype("<f4", order="C", copy=False)
    if any(d > 0xFFFFFFFF for d in arr.shape):
        raise InvalidInputError("tensor dimension exceeds u32 range")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + dims + arr.tobytes(order="C")


def tensor_from_bytes(data: bytes, source: str = "<bytes>") -> np.ndarray:
    """Decode one GPCT tensor; source only labels error messages."""
    if len(data) < _HEADER.size:
        raise BackendError(f"{source}: truncated GPCT header")
    magic, version, dtype_code, rank, pad = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BackendError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise BackendError(f"{source}: unsupported GPCT version {version}")
    if dtype_code != DTYPE_F32:
        raise BackendError(f"{source}: unsupported GPCT dtype code {dtype_code}")
    if pad != 0:
        raise BackendError(f"{source}: nonzero pad byte {pad}")
    body = _HEADER.size + 4 * rank
    if len(data) < body:
        raise BackendError(f"{source}: truncated dims (rank {rank})")
    dims = struct.unpack_from(f"<{rank}I", data, _HEADER.size)
    count = 1
    for d in dims:
        count *= d
    payload = data[body:]
    if len(payload) != 4 * count:
        raise BackendError(
            f"{source}: payload is {len(payload)} bytes, expected {4 * count}"
        )
    values = np.frombuffer(payload, dtype="<f4", count=count)
    return values.reshape(dims).copy()


def write_tensor(path, array) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(array))


def read_tensor(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise BackendError(f"{path}: cannot read tensor file ({exc})") from exc
    return tensor_from_bytes(data, source=str(path))
