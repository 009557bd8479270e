"""Deterministic seeding helpers and small shared utilities."""

from __future__ import annotations

import hashlib

import numpy as np


def stable_u64(*parts) -> int:
    """Collapse a tuple of values into a platform-stable 64-bit seed."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stable_rng(*parts) -> np.random.Generator:
    """A fresh PCG64 generator keyed by an arbitrary tuple of values."""
    return np.random.default_rng(stable_u64(*parts))


def batch_slices(n: int, size: int):
    """Yield (start, stop) pairs covering range(n) in chunks of `size`."""
    if size < 1:
        raise ValueError("batch size must be >= 1")
    for start in range(0, n, size):
        yield start, min(n, start + size)


def float_token(x) -> str:
    """Shortest decimal representation that parses back to the same float."""
    return repr(float(x))
