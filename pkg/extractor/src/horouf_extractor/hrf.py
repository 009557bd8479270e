"""Writer for the HRF frame-embedding interchange format.

Byte layout, little-endian: magic "HRF1", version u16 = 1, flags u16 = 0,
T u32, D u32, then T*D IEEE-754 float32 values in row-major order. This is
an independent implementation of the published layout; the classifier
toolkit's reader validates every file this module emits.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"HRF1"
VERSION = 1
_HEADER = struct.Struct("<4sHHII")


def write_hrf(matrix: np.ndarray, path) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"need a T x D matrix with T,D >= 1, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("refusing to write non-finite values")
    t, d = m.shape
    Path(path).write_bytes(_HEADER.pack(MAGIC, VERSION, 0, t, d) + m.tobytes())


def probe_hrf(path) -> tuple[int, int] | None:
    """(T, D) if the file is a structurally valid HRF container, else None."""
    try:
        data = Path(path).read_bytes()
    except OSError:
        return None
    if len(data) < _HEADER.size or data[:4] != MAGIC:
        return None
    _, version, flags, t, d = _HEADER.unpack_from(data)
    if version != VERSION or flags != 0 or t < 1 or d < 1:
        return None
    if len(data) != _HEADER.size + 4 * t * d:
        return None
    return t, d
