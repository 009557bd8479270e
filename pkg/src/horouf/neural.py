"""Minimal dense neural-network engine.

Implements exactly the classifier used throughout the toolkit: three fully
connected layers (input -> 256 -> 128 -> classes), ReLU activations, inverted
dropout at rate 0.3 after each hidden activation, softmax cross-entropy, and
Adam. Backpropagation produces exact analytic gradients with respect to both
parameters and inputs; the input gradient is what the attack code consumes.

All arithmetic runs in double precision internally; parameters are stored in
the model's dtype (float32 by default). Dropout masks drawn during a traced
forward pass are part of the differentiated function and are reused by the
backward pass, so gradient checks hold in train mode too.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DataError,
    DimensionMismatch,
    LabelOutOfRange,
    MissingFile,
    NonFinitePayload,
    NumericError,
    ShapeMismatch,
    StaleTrace,
)
from .util import batch_slices, stable_rng, stable_u64

TRAIN_MODE = "train"
EVAL_MODE = "eval"

DEFAULT_HIDDEN = (256, 128)
DEFAULT_DROPOUT = 0.3
DEFAULT_LR = 1e-3
DEFAULT_EPOCHS = 9
DEFAULT_BATCH_SIZE = 32


@dataclass(eq=False)
class MlpModel:
    """Parameters of the classifier plus a version counter for trace safety."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_rate: float = DEFAULT_DROPOUT
    mode: str = EVAL_MODE
    version: int = 0

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(w.shape[0] for w in self.weights) + (self.weights[-1].shape[1],)

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def copy(self) -> "MlpModel":
        return MlpModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.dropout_rate,
            self.mode,
            self.version,
        )

    def logits(self, X: np.ndarray) -> np.ndarray:
        return forward(self, X, mode=EVAL_MODE)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)

    def input_grad_and_logits(self, X: np.ndarray, y: np.ndarray):
        """Gradient of the mean cross-entropy with respect to X, plus logits."""
        logits, trace = forward(self, X, mode=EVAL_MODE, want_trace=True)
        _, input_grad = backward(trace, y)
        return input_grad, logits


def init_mlp(
    d_in: int,
    n_classes: int,
    hidden: tuple[int, int] = DEFAULT_HIDDEN,
    dropout_rate: float = DEFAULT_DROPOUT,
    seed: int = 0,
    dtype=np.float32,
) -> MlpModel:
    """Seeded uniform fan-in init (bound sqrt(6/fan_in)), zero biases."""
    if d_in < 1 or n_classes < 2 or any(h < 1 for h in hidden):
        raise ShapeMismatch(f"bad architecture {d_in} -> {hidden} -> {n_classes}")
    if not 0 <= dropout_rate < 1:
        raise DataError("dropout rate must lie in [0, 1)")
    rng = stable_rng(seed, "init")
    dims = (d_in, *hidden, n_classes)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpModel(weights, biases, dropout_rate=dropout_rate)


@dataclass(eq=False)
class Batch:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y) or len(self.y) < 1:
            raise ShapeMismatch("batch needs a non-empty 2-D X aligned with y")


@dataclass(eq=False)
class ForwardTrace:
    """Cached activations and dropout masks from one traced forward pass."""

    model: MlpModel
    model_version: int
    x: np.ndarray
    pre_activations: list[np.ndarray]
    masks: list[np.ndarray | None]
    activations: list[np.ndarray]
    logits: np.ndarray


def _dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    # Inverted dropout: survivors scaled by 1/(1-p) so evaluation needs no rescale.
    return (rng.random(shape) >= rate) / (1.0 - rate)


def forward(model: MlpModel, X: np.ndarray, mode: str | None = None,
            seed: int | None = None, want_trace: bool = False):
    """Logits for a batch; optionally a trace for backward().

    Eval mode is deterministic and dropout-free. Train mode draws seeded
    masks, so a (model, X, seed) triple fully determines the output.
    """
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != model.d_in:
        raise ShapeMismatch(f"expected B x {model.d_in} input, got {X.shape}")
    mode = mode if mode is not None else model.mode
    if mode not in (TRAIN_MODE, EVAL_MODE):
        raise DataError(f"unknown mode {mode!r}")
    use_dropout = mode == TRAIN_MODE and model.dropout_rate > 0
    if use_dropout and seed is None:
        raise DataError("train-mode forward needs a seed for the dropout masks")
    rng = stable_rng(seed, "dropout") if use_dropout else None

    a = X.astype(np.float64)
    pre_activations, masks, activations = [], [], []
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        z = a @ w.astype(np.float64) + b.astype(np.float64)
        pre_activations.append(z)
        a = np.maximum(z, 0.0)
        if use_dropout:
            m = _dropout_mask(rng, a.shape, model.dropout_rate)
            a = a * m
        else:
            m = None
        masks.append(m)
        activations.append(a)
    logits = a @ model.weights[-1].astype(np.float64) + model.biases[-1].astype(np.float64)
    if not want_trace:
        return logits
    trace = ForwardTrace(model, model.version, X.astype(np.float64),
                         pre_activations, masks, activations, logits)
    return logits, trace


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)  # max-subtraction for stability
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def _check_labels(y: np.ndarray, k: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    return y


def per_example_cross_entropy(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    y = _check_labels(y, logits.shape[1])
    return -log_softmax(logits)[np.arange(len(y)), y]


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> float:
    return float(per_example_cross_entropy(logits, y).mean())


def backward(trace: ForwardTrace, y: np.ndarray):
    """Exact gradients of the mean cross-entropy.

    Returns (param_grads, input_grad): one (dW, db) pair per layer and the
    B x D_in gradient with respect to the input batch. Dropout masks from the
    trace are reused, so the differentiated function is the traced one.
    """
    model = trace.model
    if model.version != trace.model_version:
        raise StaleTrace("model parameters changed after the forward pass")
    y = _check_labels(y, model.n_classes)
    batch = len(y)
    if batch != trace.logits.shape[0]:
        raise ShapeMismatch("labels do not match the traced batch")

    g = softmax(trace.logits)
    g[np.arange(batch), y] -= 1.0
    g /= batch  # d(mean loss)/d(logits)

    n_layers = len(model.weights)
    param_grads: list[tuple[np.ndarray, np.ndarray]] = [None] * n_layers
    param_grads[-1] = (trace.activations[-1].T @ g, g.sum(axis=0))
    upstream = g @ model.weights[-1].astype(np.float64).T
    for i in range(n_layers - 2, -1, -1):
        if trace.masks[i] is not None:
            upstream = upstream * trace.masks[i]
        upstream = upstream * (trace.pre_activations[i] > 0)
        inputs = trace.activations[i - 1] if i > 0 else trace.x
        param_grads[i] = (inputs.T @ upstream, upstream.sum(axis=0))
        upstream = upstream @ model.weights[i].astype(np.float64).T
    return param_grads, upstream


@dataclass(eq=False)
class AdamState:
    """First/second moment estimates per parameter plus the step counter."""

    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    step: int = 0
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: MlpModel, lr: float = DEFAULT_LR) -> "AdamState":
        zeros_like = lambda arrs: [np.zeros(a.shape, dtype=np.float64) for a in arrs]
        return cls(zeros_like(model.weights), zeros_like(model.weights),
                   zeros_like(model.biases), zeros_like(model.biases), lr=lr)


def adam_step(model: MlpModel, state: AdamState, param_grads) -> tuple[MlpModel, AdamState]:
    """One bias-corrected Adam update; bumps the model version."""
    if len(param_grads) != len(model.weights):
        raise ShapeMismatch("gradient list does not match the layer count")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for i, (gw, gb) in enumerate(param_grads):
        gw = np.asarray(gw, dtype=np.float64)
        gb = np.asarray(gb, dtype=np.float64)
        if gw.shape != model.weights[i].shape or gb.shape != model.biases[i].shape:
            raise ShapeMismatch(f"gradient shape mismatch at layer {i}")
        for moments, grad, params in (
            ((state.m_w[i], state.v_w[i]), gw, "weights"),
            ((state.m_b[i], state.v_b[i]), gb, "biases"),
        ):
            m, v = moments
            m *= state.beta1
            m += (1.0 - state.beta1) * grad
            v *= state.beta2
            v += (1.0 - state.beta2) * grad * grad
            update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
            target = getattr(model, params)[i]
            getattr(model, params)[i] = (target.astype(np.float64) - update).astype(target.dtype)
    model.version += 1
    return model, state


# ---------------------------------------------------------------------------
# Training loop

@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float | None = None
    val_accuracy: float | None = None


def dataset_loss_and_accuracy(model: MlpModel, dataset, batch_size: int = 4096):
    """Eval-mode loss and accuracy over a dataset, chunked for memory."""
    total_loss = 0.0
    correct = 0
    n = len(dataset)
    for start, stop in batch_slices(n, batch_size):
        logits = model.logits(dataset.X[start:stop])
        y = dataset.y[start:stop]
        total_loss += float(per_example_cross_entropy(logits, y).sum())
        correct += int((np.argmax(logits, axis=1) == y).sum())
    return total_loss / n, correct / n


def train(
    model: MlpModel,
    train_ds,
    val_ds=None,
    epochs: int = DEFAULT_EPOCHS,
    batch_size: int = DEFAULT_BATCH_SIZE,
    seed: int = 0,
    attack=None,
    lr: float = DEFAULT_LR,
    on_epoch=None,
) -> tuple[MlpModel, list[EpochMetrics]]:
    """Adam training with seeded per-epoch shuffling.

    With an attack config, every batch is replaced by its projected-gradient
    perturbation (computed in eval mode) before the update, which is the
    inner maximization of the robust objective; a zero budget reduces this
    bitwise to standard training. The whole run is a deterministic function
    of (model, data, seed).
    """
    n = len(train_ds)
    if n < 1:
        raise DataError("training dataset is empty")
    _check_labels(train_ds.y, model.n_classes)
    if train_ds.X.shape[1] != model.d_in:
        raise ShapeMismatch(f"dataset width {train_ds.X.shape[1]} != model input {model.d_in}")

    state = AdamState.for_model(model, lr=lr)
    shuffle_rng = stable_rng(seed, "shuffle")
    metrics: list[EpochMetrics] = []
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for bi, (start, stop) in enumerate(batch_slices(n, batch_size)):
            idx = order[start:stop]
            X = train_ds.X[idx]
            y = train_ds.y[idx]
            if attack is not None:
                from .adversarial import pgd  # local import to avoid a cycle

                pert = pgd(model, Batch(X, y), _batch_attack_cfg(attack, seed, epoch, bi))
                X = X + pert.delta
            logits, trace = forward(
                model, X, mode=TRAIN_MODE,
                seed=stable_u64(seed, "dropout", epoch, bi), want_trace=True,
            )
            loss = cross_entropy(logits, y)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}, batch {bi}")
            loss_sum += loss * len(y)
            correct += int((np.argmax(logits, axis=1) == y).sum())
            param_grads, _ = backward(trace, y)
            adam_step(model, state, param_grads)
        row = EpochMetrics(epoch + 1, loss_sum / n, correct / n)
        if val_ds is not None and len(val_ds):
            row.val_loss, row.val_accuracy = dataset_loss_and_accuracy(model, val_ds)
        metrics.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return model, metrics


def _batch_attack_cfg(attack, seed: int, epoch: int, batch_index: int):
    """Give random-start attacks a fresh deterministic seed per batch."""
    from dataclasses import replace as _replace

    if attack.init == "random":
        return _replace(attack, init_seed=stable_u64(seed, "attack", attack.init_seed, epoch, batch_index))
    return attack


# ---------------------------------------------------------------------------
# Checkpoints

CKPT_MAGIC = b"HRFM"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHH")
_LAYER_HEADER = struct.Struct("<II")


def save_checkpoint(model: MlpModel, path, meta: dict | None = None) -> None:
    """Binary weights plus a JSON sidecar at <path>.json.

    Per layer: rows (fan-in) u32, cols (fan-out) u32, float32 row-major
    weights, float32 biases. Weights are stored as float32 regardless of the
    in-memory dtype.
    """
    blob = _CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, len(model.weights))
    for w, b in zip(model.weights, model.biases):
        blob += _LAYER_HEADER.pack(w.shape[0], w.shape[1])
        blob += np.ascontiguousarray(w, dtype="<f4").tobytes()
        blob += np.ascontiguousarray(b, dtype="<f4").tobytes()
    path = Path(path)
    path.write_bytes(blob)
    sidecar = {
        "schema_version": 1,
        "architecture": {"dims": list(model.dims), "dropout_rate": model.dropout_rate},
    }
    sidecar.update(meta or {})
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[MlpModel, dict]:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise MissingFile(f"{path}: no such file") from exc
    if len(data) < _CKPT_HEADER.size or data[:4] != CKPT_MAGIC:
        raise BadMagic(f"{path}: not a checkpoint file")
    _, version, n_layers, = _CKPT_HEADER.unpack_from(data)
    if version != CKPT_VERSION:
        raise BadMagic(f"{path}: unsupported checkpoint version {version}")
    pos = _CKPT_HEADER.size
    weights, biases = [], []
    for _ in range(n_layers):
        if pos + _LAYER_HEADER.size > len(data):
            raise DimensionMismatch(f"{path}: truncated layer header")
        rows, cols = _LAYER_HEADER.unpack_from(data, pos)
        pos += _LAYER_HEADER.size
        need = 4 * (rows * cols + cols)
        if rows < 1 or cols < 1 or pos + need > len(data):
            raise DimensionMismatch(f"{path}: truncated layer payload")
        w = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=pos).reshape(rows, cols).copy()
        pos += 4 * rows * cols
        b = np.frombuffer(data, dtype="<f4", count=cols, offset=pos).copy()
        pos += 4 * cols
        weights.append(w)
        biases.append(b)
    if pos != len(data):
        raise DimensionMismatch(f"{path}: {len(data) - pos} trailing bytes")
    for prev, nxt in zip(weights[:-1], weights[1:]):
        if prev.shape[1] != nxt.shape[0]:
            raise DimensionMismatch(f"{path}: layer shapes do not chain")
    if any(not np.all(np.isfinite(a)) for a in weights + biases):
        raise NonFinitePayload(f"{path}: checkpoint contains non-finite parameters")

    meta = {}
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
    dropout = meta.get("architecture", {}).get("dropout_rate", DEFAULT_DROPOUT)
    return MlpModel(weights, biases, dropout_rate=dropout), meta
