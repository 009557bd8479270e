"""Frame-embedding interchange format, temporal mean pooling, dataset assembly.

HRF layout, little-endian throughout:

    magic   4 bytes  "HRF1"
    version u16      1
    flags   u16      0
    T       u32      frame count, >= 1
    D       u32      embedding width, >= 1
    payload T*D IEEE-754 float32, row-major

A frame matrix holds one row per 20 ms speech frame; pooling collapses it to
a single utterance vector by the arithmetic mean over the time axis.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Manifest, Split, encode_label
from .errors import (
    BadMagic,
    DimensionMismatch,
    MissingFile,
    MixedWidth,
    NonFinitePayload,
)

HRF_MAGIC = b"HRF1"
HRF_VERSION = 1
_HEADER = struct.Struct("<4sHHII")


def write_hrf(matrix: np.ndarray, path) -> None:
    m = np.asarray(matrix)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionMismatch(f"need a T x D matrix with T,D >= 1, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFinitePayload("refusing to write non-finite values")
    m = np.ascontiguousarray(m, dtype="<f4")
    t, d = m.shape
    Path(path).write_bytes(_HEADER.pack(HRF_MAGIC, HRF_VERSION, 0, t, d) + m.tobytes())


def read_hrf(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise MissingFile(f"{path}: no such file") from exc
    if len(data) < _HEADER.size or data[:4] != HRF_MAGIC:
        raise BadMagic(f"{path}: not an HRF file")
    magic, version, flags, t, d = _HEADER.unpack_from(data)
    if version != HRF_VERSION or flags != 0:
        raise BadMagic(f"{path}: unsupported version {version} / flags {flags}")
    if t < 1 or d < 1:
        raise DimensionMismatch(f"{path}: header declares T={t}, D={d}")
    expected = _HEADER.size + 4 * t * d
    if len(data) != expected:
        raise DimensionMismatch(
            f"{path}: header declares {t}x{d} ({expected} bytes), file has {len(data)}"
        )
    matrix = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(t, d).copy()
    if not np.all(np.isfinite(matrix)):
        raise NonFinitePayload(f"{path}: payload contains NaN or Inf")
    return matrix


def mean_pool(matrix: np.ndarray) -> np.ndarray:
    """Arithmetic mean over the time axis; returns a length-D float32 vector.

    Columns are summed in sorted order with double-precision accumulation, so
    the result is exactly invariant under row permutations.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionMismatch(f"need a T x D matrix, got shape {np.shape(matrix)}")
    if not np.all(np.isfinite(m)):
        raise NonFinitePayload("frame matrix contains NaN or Inf")
    ordered = np.sort(m, axis=0)
    return (ordered.sum(axis=0) / m.shape[0]).astype(np.float32)


@dataclass(frozen=True, eq=False)
class EmbeddingDataset:
    """Pooled utterance vectors with aligned class ids and source ids."""

    X: np.ndarray
    y: np.ndarray
    ids: tuple[str, ...]

    def __post_init__(self):
        if len(self.X) != len(self.y) or len(self.y) != len(self.ids):
            raise DimensionMismatch("X, y and ids must have the same length")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.X.shape[1] if self.X.ndim == 2 else 0

    def subset(self, indices) -> "EmbeddingDataset":
        idx = np.asarray(indices)
        return EmbeddingDataset(self.X[idx], self.y[idx], tuple(self.ids[i] for i in idx))


def assemble(manifest: Manifest, split: Split | None = None, base_dir=None) -> EmbeddingDataset:
    """Pool every selected entry's frame matrix into a training matrix.

    Rows follow manifest order; labels go through the letter codec. Relative
    embedding paths are resolved against base_dir.
    """
    base = Path(base_dir) if base_dir is not None else Path(".")
    rows: list[np.ndarray] = []
    labels: list[int] = []
    ids: list[str] = []
    width = None
    for entry in manifest.select(split):
        if entry.embedding_path is None:
            raise MissingFile(f"entry {entry.id!r} has no embedding_path")
        path = Path(entry.embedding_path)
        if not path.is_absolute():
            path = base / path
        if not path.exists():
            raise MissingFile(f"entry {entry.id!r}: {path} does not exist")
        matrix = read_hrf(path)
        if width is None:
            width = matrix.shape[1]
        elif matrix.shape[1] != width:
            raise MixedWidth(
                f"entry {entry.id!r} has width {matrix.shape[1]}, expected {width}"
            )
        rows.append(mean_pool(matrix))
        labels.append(encode_label(entry.label))
        ids.append(entry.id)
    if not rows:
        return EmbeddingDataset(np.zeros((0, 0), dtype=np.float32), np.zeros(0, dtype=np.int64), ())
    return EmbeddingDataset(np.stack(rows), np.asarray(labels, dtype=np.int64), tuple(ids))
