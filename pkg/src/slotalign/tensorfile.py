"""Raw float32 matrix files: 16-byte header then little-endian row-major data.

Header layout (all little-endian uint32): magic, version, rows, cols.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = 0x46544C53  # b"SLTF" read as little-endian uint32
VERSION = 1
_HEADER = struct.Struct("<4I")
HEADER_SIZE = _HEADER.size


def pack_matrix(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise FormatError(f"expected a 1-D or 2-D array, got shape {arr.shape}")
    rows, cols = arr.shape
    body = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, VERSION, rows, cols) + body


def unpack_matrix(buf: bytes | memoryview, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one matrix starting at ``offset``; returns (array, next offset)."""
    if len(buf) - offset < HEADER_SIZE:
        raise FormatError("truncated matrix header")
    magic, version, rows, cols = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise FormatError(f"bad magic 0x{magic:08x}")
    if version != VERSION:
        raise FormatError(f"unsupported matrix version {version}")
    start = offset + HEADER_SIZE
    end = start + 4 * rows * cols
    if len(buf) < end:
        raise FormatError("truncated matrix body")
    arr = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=start)
    return arr.reshape(rows, cols).astype(np.float32), end


def write_matrix(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(pack_matrix(arr))


def read_matrix(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = unpack_matrix(buf)
    if end != len(buf):
        raise FormatError(f"{path}: {len(buf) - end} trailing bytes")
    return arr
