"""Desk-scale ground-truth machinery.

Three independent reference implementations back the rest of the test suite:
a synthetic Gaussian-cluster corpus with a guaranteed margin between class
means, a central finite-difference gradient estimator, and a brute-force
enumeration of the budget-box vertices that yields the true worst-case loss
for convex surrogate models.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingDataset
from .errors import DataError, DimensionTooLarge, MeanPlacementFailure
from .neural import per_example_cross_entropy, softmax
from .util import stable_rng

MAX_VERTEX_DIM = 20
_MAX_PLACEMENT_ATTEMPTS = 1000


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian clusters: K means at pairwise distance >= margin, noise sigma."""

    n_classes: int = 10
    dim: int = 64
    n_per_class: int = 200
    sigma: float = 0.8
    margin: float = 6.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise DataError("need at least 2 classes")
        if self.dim < 1 or self.n_per_class < 1:
            raise DataError("dim and n_per_class must be >= 1")
        if self.margin <= 0 or self.sigma < 0:
            raise DataError("need margin > 0 and sigma >= 0")


def generate(spec: SyntheticSpec) -> tuple[EmbeddingDataset, np.ndarray]:
    """Seed-deterministic dataset plus the true class means (float32 K x D).

    Mean candidates are redrawn until the new mean keeps distance >= margin
    from all accepted ones; a bounded number of rejections per mean guards
    against unsatisfiable requests.
    """
    rng = stable_rng(spec.seed, "synth")
    # Candidate scale puts typical pairwise distances ~25% above the floor,
    # so the margin is a tight control on class separation, not just a bound.
    scale = 1.25 * spec.margin / np.sqrt(2.0 * spec.dim)
    means64 = np.empty((spec.n_classes, spec.dim), dtype=np.float64)
    for k in range(spec.n_classes):
        for attempt in range(_MAX_PLACEMENT_ATTEMPTS + 1):
            if attempt == _MAX_PLACEMENT_ATTEMPTS:
                raise MeanPlacementFailure(
                    f"could not place mean {k} at margin {spec.margin} in dim {spec.dim}"
                )
            candidate = rng.normal(0.0, scale, spec.dim)
            if k == 0 or np.linalg.norm(means64[:k] - candidate, axis=1).min() >= spec.margin:
                means64[k] = candidate
                break

    rows = []
    labels = []
    ids = []
    for k in range(spec.n_classes):
        noise = rng.normal(0.0, spec.sigma, (spec.n_per_class, spec.dim))
        rows.append((means64[k] + noise).astype(np.float32))
        labels.extend([k] * spec.n_per_class)
        ids.extend(f"synth-{k:03d}-{i:05d}" for i in range(spec.n_per_class))
    dataset = EmbeddingDataset(
        np.concatenate(rows), np.asarray(labels, dtype=np.int64), tuple(ids)
    )
    return dataset, means64.astype(np.float32)


def finite_diff_grad(function, point: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(x + h e_i) - f(x - h e_i)) / 2h, double precision."""
    if h <= 0:
        raise DataError("finite-difference step must be > 0")
    x = np.asarray(point, dtype=np.float64)
    grad = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        step = np.zeros_like(x)
        step[idx] = h
        grad[idx] = (function(x + step) - function(x - step)) / (2.0 * h)
    return grad


class LinearSurrogate:
    """Single linear layer + cross-entropy: a loss convex in the input.

    Implements the same model protocol the attacks use (logits and
    input_grad_and_logits), so it doubles as the convex target for the
    vertex oracle comparisons.
    """

    def __init__(self, weights: np.ndarray, biases: np.ndarray):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.biases = np.asarray(biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[1],):
            raise DataError("need D x K weights and length-K biases")

    @classmethod
    def random(cls, dim: int, n_classes: int, seed: int = 0, scale: float = 1.0):
        rng = stable_rng(seed, "surrogate")
        return cls(rng.normal(0.0, scale, (dim, n_classes)), rng.normal(0.0, scale, n_classes))

    @property
    def d_in(self) -> int:
        return self.weights.shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]

    def logits(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights + self.biases

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)

    def input_grad_and_logits(self, X: np.ndarray, y: np.ndarray):
        logits = self.logits(X)
        p = softmax(logits)
        p[np.arange(len(y)), np.asarray(y, dtype=np.int64)] -= 1.0
        return (p @ self.weights.T) / len(y), logits


def vertex_attack(convex_model, example: np.ndarray, label: int, epsilon: float) -> float:
    """True worst-case loss over the budget box for a convex loss.

    A convex function attains its maximum over a box at a vertex, so the
    exhaustive maximum over all 2^D sign patterns x + eps * s is exact.
    Callers guarantee convexity (a single linear layer + cross-entropy).
    """
    x = np.asarray(example, dtype=np.float64).reshape(-1)
    d = x.size
    if d > MAX_VERTEX_DIM:
        raise DimensionTooLarge(f"vertex enumeration limited to D <= {MAX_VERTEX_DIM}, got {d}")
    y = np.asarray([label], dtype=np.int64)
    if epsilon == 0:
        return float(per_example_cross_entropy(convex_model.logits(x[None, :]), y)[0])
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
    points = x + epsilon * signs
    labels = np.full(len(points), label, dtype=np.int64)
    losses = per_example_cross_entropy(convex_model.logits(points), labels)
    return float(losses.max())
