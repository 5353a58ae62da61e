"""Portable binary matrix files.

Layout: a 16-byte little-endian header ``magic (4s) | rows (u32) | cols (u32) |
element width in bytes (u32)`` followed by row-major IEEE floats.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"UDMX"
_HEADER = struct.Struct("<4sIII")
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class MatrixFormatError(ValueError):
    pass


def write_matrix(path, matrix, width: int = 4) -> None:
    if width not in _DTYPES:
        raise ValueError(f"element width must be 4 or 8 bytes, got {width}")
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, m.shape[0], m.shape[1], width))
        fh.write(np.ascontiguousarray(m, dtype=_DTYPES[width]).tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise MatrixFormatError(f"{path}: truncated header")
        magic, rows, cols, width = _HEADER.unpack(header)
        if magic != MAGIC:
            raise MatrixFormatError(f"{path}: bad magic {magic!r}")
        if width not in _DTYPES:
            raise MatrixFormatError(f"{path}: unsupported element width {width}")
        body = fh.read()
    if len(body) != rows * cols * width:
        raise MatrixFormatError(f"{path}: expected {rows * cols * width} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype=_DTYPES[width]).reshape(rows, cols).astype(np.float64)
