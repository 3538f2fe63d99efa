"""Reader/writer for the KIFT matrix format.

Layout: 16-byte header ``b"KIFT"`` + u32 n_rows + u32 n_cols + u32 reserved
(zero), all little-endian, followed by ``n_rows * n_cols`` little-endian
float32 values in row-major order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from kinject.errors import FormatError

MAGIC = b"KIFT"
_HEADER = struct.Struct("<4sIII")


def write_kift(path, matrix) -> None:
    arr = np.asarray(matrix)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise FormatError(f"KIFT stores 2-D matrices, got shape {arr.shape}")
    rows, cols = arr.shape
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, rows, cols, 0))
        fh.write(payload)


def read_kift(path) -> np.ndarray:
    """Return the stored matrix as float64 (values are exactly the float32 ones)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, rows, cols, _ = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * rows * cols
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size, count=rows * cols)
    return data.reshape(rows, cols).astype(np.float64)
