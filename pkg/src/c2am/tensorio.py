"""Binary tensor file format used for feature maps, activation maps and CAM stacks.

Layout (little-endian throughout):
    magic   4 bytes  b"C2AM"
    version u8       currently 1
    rank    u8       number of dimensions, >= 1
    dims    rank * u32
    payload prod(dims) * float32, row-major
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"C2AM"
VERSION = 1


class TensorFormatError(ValueError):
    """Raised when a tensor file is malformed (bad magic, version, dims or truncation)."""


def write_tensor(path, array) -> None:
    """Write a float array to ``path`` in the C2AM tensor format."""
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim < 1:
        raise TensorFormatError("rank-0 tensors are not supported")
    arr = np.ascontiguousarray(arr)
    if arr.size == 0:
        raise TensorFormatError("empty tensors are not supported")
    if arr.ndim > 255:
        raise TensorFormatError("rank exceeds u8 range")
    header = MAGIC + struct.pack("<BB", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a C2AM tensor file, returning a float32 array."""
    raw = Path(path).read_bytes()
    if len(raw) < 6:
        raise TensorFormatError(f"{path}: file too short for header")
    if raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {raw[:4]!r}")
    version, rank = struct.unpack_from("<BB", raw, 4)
    if version != VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    if rank < 1:
        raise TensorFormatError(f"{path}: rank must be >= 1")
    offset = 6
    if len(raw) < offset + 4 * rank:
        raise TensorFormatError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{rank}I", raw, offset)
    offset += 4 * rank
    if any(d == 0 for d in dims):
        raise TensorFormatError(f"{path}: zero-sized dimension in {dims}")
    count = int(np.prod(dims))
    expected = offset + 4 * count
    if len(raw) != expected:
        raise TensorFormatError(
            f"{path}: payload size mismatch (got {len(raw)} bytes, expected {expected})"
        )
    payload = np.frombuffer(raw, dtype="<f4", offset=offset, count=count)
    return payload.reshape(dims).astype(np.float32, copy=True)
