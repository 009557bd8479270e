"""Sign-gradient attacks under a coordinate-wise budget, and robust training.

The iterative attack follows the standard update

    delta_{t+1} = clamp(delta_t + alpha * sign(grad_x loss(x + delta_t)), -eps, +eps)

with clamping as the exact projection onto the budget box. The single-step
attack is the steps=1, alpha=eps special case of the same update.

Best-iterate bookkeeping: while iterating, the attack records per example
both the highest loss seen at any visited iterate (reported as the achieved
loss) and the most damaging iterate, preferring any misclassifying iterate
over all correctly classified ones and breaking ties by loss. With zero
initialization the clean point is among the candidates, which makes robust
accuracy at most clean accuracy by construction on every evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .neural import Batch, per_example_cross_entropy, train
from .util import stable_rng

INIT_ZERO = "zero"
INIT_RANDOM = "random"

EVAL_STEPS = 50
TRAIN_STEPS = 10


@dataclass(frozen=True)
class AttackConfig:
    """Budget, step size and schedule for the sign-gradient attacks.

    alpha=None resolves to the standard 2.5 * epsilon / steps. init is
    either "zero" or "random" (uniform in the budget box, seeded by
    init_seed).
    """

    epsilon: float
    alpha: float | None = None
    steps: int = TRAIN_STEPS
    init: str = INIT_ZERO
    init_seed: int = 0
    track_best: bool = True

    def __post_init__(self):
        if self.epsilon < 0:
            raise DataError("epsilon must be >= 0")
        if self.steps < 0:
            raise DataError("steps must be >= 0")
        if self.alpha is not None and self.steps > 0 and self.alpha <= 0:
            raise DataError("alpha must be > 0 when steps > 0")
        if self.init not in (INIT_ZERO, INIT_RANDOM):
            raise DataError(f"unknown init {self.init!r}")

    @property
    def resolved_alpha(self) -> float:
        if self.alpha is not None:
            return self.alpha
        if self.steps == 0:
            return 0.0
        return 2.5 * self.epsilon / self.steps


@dataclass(eq=False)
class Perturbation:
    """Attack result for one batch.

    delta is the selected per-example perturbation (always inside the budget
    box). per_example_loss is the highest loss observed per example across
    the visited iterates; achieved_loss is its mean. Without best-tracking
    both refer to the final iterate.
    """

    delta: np.ndarray
    achieved_loss: float
    per_example_loss: np.ndarray


def project(delta: np.ndarray, epsilon: float) -> np.ndarray:
    """Coordinate-wise clamp onto [-epsilon, +epsilon]; idempotent."""
    return np.clip(delta, -epsilon, epsilon)


def _losses_and_preds(model, X, y):
    logits = model.logits(X)
    return per_example_cross_entropy(logits, y), np.argmax(logits, axis=1)


class _BestTracker:
    """Per-example records of the strongest iterates seen so far."""

    def __init__(self, y):
        self.y = y
        self.max_loss = np.full(len(y), -np.inf)
        self.sel_delta = None
        self.sel_loss = np.full(len(y), -np.inf)
        self.sel_flipped = np.zeros(len(y), dtype=bool)

    def update(self, delta, losses, preds):
        self.max_loss = np.maximum(self.max_loss, losses)
        flipped = preds != self.y
        if self.sel_delta is None:
            self.sel_delta = delta.copy()
            self.sel_loss = losses.copy()
            self.sel_flipped = flipped.copy()
            return
        better = np.where(
            flipped == self.sel_flipped,
            losses > self.sel_loss,
            flipped,  # a misclassifying iterate beats any correct one
        )
        self.sel_delta[better] = delta[better]
        self.sel_loss[better] = losses[better]
        self.sel_flipped[better] = flipped[better]


def pgd(model, batch: Batch, cfg: AttackConfig) -> Perturbation:
    """Iterative sign-gradient attack with exact box projection.

    The model is queried in eval mode only (the model protocol is
    input_grad_and_logits / logits, both dropout-free). Deterministic given
    (model, batch, cfg).
    """
    X = np.asarray(batch.X, dtype=np.float64)
    y = batch.y
    if cfg.epsilon == 0:
        losses, _ = _losses_and_preds(model, X, y)
        return Perturbation(np.zeros_like(X), float(losses.mean()), losses)

    if cfg.init == INIT_RANDOM:
        delta = stable_rng(cfg.init_seed, "attack-init").uniform(-cfg.epsilon, cfg.epsilon, X.shape)
    else:
        delta = np.zeros_like(X)

    tracker = _BestTracker(y) if cfg.track_best else None
    alpha = cfg.resolved_alpha
    for _ in range(cfg.steps):
        grad, logits = model.input_grad_and_logits(X + delta, y)
        if tracker is not None:
            tracker.update(delta, per_example_cross_entropy(logits, y), np.argmax(logits, axis=1))
        delta = project(delta + alpha * np.sign(grad), cfg.epsilon)

    losses, preds = _losses_and_preds(model, X + delta, y)
    if tracker is None:
        return Perturbation(delta, float(losses.mean()), losses)
    tracker.update(delta, losses, preds)
    return Perturbation(tracker.sel_delta, float(tracker.max_loss.mean()), tracker.max_loss)


def fgsm(model, batch: Batch, epsilon: float) -> Perturbation:
    """Single sign step of size epsilon from the clean point."""
    X = np.asarray(batch.X, dtype=np.float64)
    y = batch.y
    if epsilon == 0:
        losses, _ = _losses_and_preds(model, X, y)
        return Perturbation(np.zeros_like(X), float(losses.mean()), losses)
    grad, _ = model.input_grad_and_logits(X, y)
    delta = project(np.zeros_like(X) + epsilon * np.sign(grad), epsilon)
    losses, _ = _losses_and_preds(model, X + delta, y)
    return Perturbation(delta, float(losses.mean()), losses)


def adversarial_train(
    model,
    train_ds,
    cfg: AttackConfig,
    epochs: int = 9,
    batch_size: int = 32,
    seed: int = 0,
    val_ds=None,
    lr: float = 1e-3,
    on_epoch=None,
):
    """Robust training: each batch is attacked in eval mode, then one Adam
    update runs on the perturbed batch in train mode (inner maximization,
    outer minimization). A zero budget reproduces standard training bitwise
    at equal seeds."""
    return train(
        model,
        train_ds,
        val_ds=val_ds,
        epochs=epochs,
        batch_size=batch_size,
        seed=seed,
        attack=cfg,
        lr=lr,
        on_epoch=on_epoch,
    )
