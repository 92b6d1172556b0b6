"""From-scratch multilayer perceptron with backpropagation.

Hidden layers use one of three interchangeable activations (ReLU, ELU, or
the exact erf-based GELU); the output layer is a 4-way softmax trained with
categorical cross-entropy. Training runs seeded minibatch Adam (or plain
SGD) with strict-improvement early stopping. All math is float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import erf

from .data_pipeline import ConfigurationError, DatasetBundle, feature_matrix
from .seeds import mix64

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_LOG_CLIP = 1e-12


class Activation(str, Enum):
    RELU = "relu"
    ELU = "elu"
    GELU = "gelu"


class Monitor(str, Enum):
    TRAIN_ACCURACY = "train_accuracy"
    VAL_LOSS = "val_loss"


class StopReason(str, Enum):
    EARLY_STOPPED = "early_stopped"
    MAX_EPOCHS = "max_epochs"


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or parameter."""


def _std_normal_cdf(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / _SQRT2))


def _std_normal_pdf(x: np.ndarray) -> np.ndarray:
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def activate(kind: Activation, x, alpha: float = 1.0):
    """Apply the hidden-layer activation elementwise.

    ReLU is max(0, x); ELU is x for x > 0 else alpha*(e^x - 1); GELU is
    x * Phi(x) with Phi the exact standard-normal CDF (no tanh shortcut).
    Accepts scalars or arrays.
    """
    x = np.asarray(x, dtype=float)
    if kind is Activation.RELU:
        return np.maximum(0.0, x)
    if kind is Activation.ELU:
        return np.where(x > 0, x, alpha * np.expm1(x))
    if kind is Activation.GELU:
        return x * _std_normal_cdf(x)
    raise ValueError(f"unknown activation {kind!r}")


def activate_derivative(kind: Activation, x, alpha: float = 1.0):
    """Elementwise derivative of :func:`activate`; ReLU' at 0 is defined as 0."""
    x = np.asarray(x, dtype=float)
    if kind is Activation.RELU:
        return (x > 0).astype(float)
    if kind is Activation.ELU:
        return np.where(x > 0, 1.0, alpha * np.exp(x))
    if kind is Activation.GELU:
        return _std_normal_cdf(x) + x * _std_normal_pdf(x)
    raise ValueError(f"unknown activation {kind!r}")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over the last axis; rows sum to 1."""
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, true_class: int) -> float:
    """Negative log-likelihood of one class, clipped at 1e-12 for finiteness."""
    probs = np.asarray(probs, dtype=float)
    if not 0 <= true_class < probs.shape[-1]:
        raise ValueError(f"class index {true_class} out of range for {probs.shape[-1]} classes")
    return float(-np.log(probs[true_class] + _LOG_CLIP))


def mean_cross_entropy(probs: np.ndarray, true_classes: np.ndarray) -> float:
    picked = probs[np.arange(len(true_classes)), true_classes]
    return float(-np.log(picked + _LOG_CLIP).mean())


@dataclass
class MlpConfig:
    """Architecture settings; hidden activation applies to hidden layers only."""

    input_dim: int = 5
    hidden_dims: tuple[int, ...] = (512, 256, 256, 128)
    output_dim: int = 4
    activation: Activation = Activation.RELU
    elu_alpha: float = 1.0
    init_seed: int = 0

    def __post_init__(self) -> None:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d < 1 for d in dims):
            raise ConfigurationError("all layer dimensions must be >= 1")


@dataclass
class TrainConfig:
    batch_size: int = 16
    max_epochs: int = 400
    patience: int = 10
    monitor: Monitor = Monitor.TRAIN_ACCURACY
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-7
    optimizer: str = "adam"  # "adam" or "sgd"
    shuffle_seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigurationError("max_epochs must be >= 1")
        if self.patience < 0:
            raise ConfigurationError("patience must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")


@dataclass(eq=False)
class Mlp:
    """Dense network: weights[i] is [fan_out, fan_in], biases[i] is [fan_out]."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: Activation
    elu_alpha: float = 1.0

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1], *(w.shape[0] for w in self.weights))


@dataclass
class EpochStats:
    train_loss: float
    train_accuracy: float
    val_loss: float | None = None
    val_accuracy: float | None = None


@dataclass
class TrainResult:
    model: Mlp
    epochs_run: int
    history: list[EpochStats]
    stop_reason: StopReason


def init(config: MlpConfig) -> Mlp:
    """Glorot-uniform weights, zero biases, deterministic given init_seed."""
    rng = np.random.default_rng(config.init_seed)
    dims = (config.input_dim, *config.hidden_dims, config.output_dim)
    weights: list[np.ndarray] = []
    biases: list[np.ndarray] = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(
        weights=weights,
        biases=biases,
        activation=config.activation,
        elu_alpha=config.elu_alpha,
    )


def _forward_trace(
    model: Mlp, batch: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Forward pass keeping per-layer pre-activations and activations."""
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[1] != model.weights[0].shape[1]:
        raise ValueError(
            f"batch shape {batch.shape} does not match input dim {model.weights[0].shape[1]}"
        )
    activations = [batch]
    pre_activations: list[np.ndarray] = []
    out = batch
    last = len(model.weights) - 1
    for index, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = out @ w.T + b
        pre_activations.append(z)
        out = softmax(z) if index == last else activate(model.activation, z, model.elu_alpha)
        activations.append(out)
    return activations[-1], pre_activations, activations


def forward(model: Mlp, batch: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch; each row sums to 1."""
    probs, _, _ = _forward_trace(model, batch)
    return probs


def _gradients_from_trace(
    model: Mlp,
    activations: list[np.ndarray],
    pre_activations: list[np.ndarray],
    probs: np.ndarray,
    true_classes: np.ndarray,
    out: tuple[list[np.ndarray], list[np.ndarray]] | None = None,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    batch_size = len(true_classes)
    delta = probs.copy()
    delta[np.arange(batch_size), true_classes] -= 1.0
    delta /= batch_size
    if out is not None:
        grad_w, grad_b = out
    else:
        grad_w = [np.empty_like(w) for w in model.weights]
        grad_b = [np.empty_like(b) for b in model.biases]
    for layer in reversed(range(len(model.weights))):
        np.matmul(delta.T, activations[layer], out=grad_w[layer])
        delta.sum(axis=0, out=grad_b[layer])
        if layer > 0:
            delta = (delta @ model.weights[layer]) * activate_derivative(
                model.activation, pre_activations[layer - 1], model.elu_alpha
            )
    return grad_w, grad_b


def backward(
    model: Mlp, batch: np.ndarray, true_classes: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Exact gradients of the mean cross-entropy over the batch."""
    batch = np.asarray(batch, dtype=float)
    true_classes = np.asarray(true_classes, dtype=np.int64)
    if len(batch) != len(true_classes):
        raise ValueError("batch and labels must have equal length")
    probs, pre_activations, activations = _forward_trace(model, batch)
    return _gradients_from_trace(model, activations, pre_activations, probs, true_classes)


class _FlatParams:
    """All parameters in one contiguous vector, with per-layer views.

    Rebinds the model's weight/bias arrays to views of the vector (values
    preserved), and provides a matching flat gradient buffer, so the
    optimizer update is a handful of whole-vector operations per step.
    """

    def __init__(self, model: Mlp) -> None:
        total = sum(w.size + b.size for w, b in zip(model.weights, model.biases))
        self.params = np.empty(total)
        self.grads = np.zeros(total)
        self.grad_w: list[np.ndarray] = []
        self.grad_b: list[np.ndarray] = []
        offset = 0
        for i, (w, b) in enumerate(zip(model.weights, model.biases)):
            pw = self.params[offset : offset + w.size].reshape(w.shape)
            pw[:] = w
            self.grad_w.append(self.grads[offset : offset + w.size].reshape(w.shape))
            model.weights[i] = pw
            offset += w.size
            pb = self.params[offset : offset + b.size]
            pb[:] = b
            self.grad_b.append(self.grads[offset : offset + b.size])
            model.biases[i] = pb
            offset += b.size


class _AdamState:
    def __init__(self, size: int) -> None:
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.scratch = np.empty(size)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray, tc: TrainConfig) -> None:
        self.t += 1
        b1, b2 = tc.adam_beta1, tc.adam_beta2
        m, v, s = self.m, self.v, self.scratch
        np.multiply(grads, grads, out=s)
        s *= 1.0 - b2
        v *= b2
        v += s
        np.multiply(grads, 1.0 - b1, out=s)
        m *= b1
        m += s
        np.divide(v, 1.0 - b2**self.t, out=s)
        np.sqrt(s, out=s)
        s += tc.adam_epsilon
        np.divide(m, s, out=s)
        s *= tc.learning_rate / (1.0 - b1**self.t)
        params -= s


def evaluate(model: Mlp, X: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """(mean cross-entropy, accuracy) of the model on a feature matrix."""
    probs = forward(model, X)
    loss = mean_cross_entropy(probs, y)
    accuracy = float((probs.argmax(axis=1) == y).mean())
    return loss, accuracy


def _improved(monitor: Monitor, value: float, best: float) -> bool:
    if monitor is Monitor.TRAIN_ACCURACY:
        return value > best
    return value < best


def train(model: Mlp, bundle: DatasetBundle, tc: TrainConfig) -> TrainResult:
    """Minibatch training with early stopping; mutates and returns the model.

    Each epoch reshuffles the training set (seeded from the shuffle seed and
    the epoch index) and walks it in batches; the final short batch is kept.
    Train loss/accuracy are the running averages over those batches, as the
    weights evolve; validation metrics are evaluated after the epoch. When
    the monitored metric fails to strictly improve for ``patience``
    consecutive epochs, training stops and keeps the last weights.
    """
    X, y = feature_matrix(bundle.train)
    has_validation = bundle.validation is not None
    if tc.monitor is Monitor.VAL_LOSS and not has_validation:
        raise ConfigurationError("monitor=val_loss requires a validation partition")
    X_val, y_val = feature_matrix(bundle.validation) if has_validation else (None, None)

    flat = _FlatParams(model)
    adam = _AdamState(flat.params.size) if tc.optimizer == "adam" else None
    n = len(X)
    best: float | None = None
    wait = 0
    history: list[EpochStats] = []
    stop_reason = StopReason.MAX_EPOCHS
    epochs_run = tc.max_epochs

    for epoch in range(1, tc.max_epochs + 1):
        order = np.random.default_rng(mix64(tc.shuffle_seed, epoch)).permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, tc.batch_size):
            idx = order[start : start + tc.batch_size]
            xb, yb = X[idx], y[idx]
            probs, pre_acts, acts = _forward_trace(model, xb)
            batch_loss = mean_cross_entropy(probs, yb)
            if not math.isfinite(batch_loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            _gradients_from_trace(
                model, acts, pre_acts, probs, yb, out=(flat.grad_w, flat.grad_b)
            )
            if adam is not None:
                adam.step(flat.params, flat.grads, tc)
            else:
                flat.params -= tc.learning_rate * flat.grads
            loss_sum += batch_loss * len(idx)
            correct += int((probs.argmax(axis=1) == yb).sum())
        if not np.isfinite(flat.params).all():
            raise DivergenceError(f"non-finite parameter at epoch {epoch}")

        stats = EpochStats(train_loss=loss_sum / n, train_accuracy=correct / n)
        if has_validation:
            stats.val_loss, stats.val_accuracy = evaluate(model, X_val, y_val)
        history.append(stats)

        monitored = (
            stats.train_accuracy if tc.monitor is Monitor.TRAIN_ACCURACY else stats.val_loss
        )
        if best is None or _improved(tc.monitor, monitored, best):
            best = monitored
            wait = 0
        else:
            wait += 1
            if wait >= tc.patience:
                stop_reason = StopReason.EARLY_STOPPED
                epochs_run = epoch
                break

    return TrainResult(model=model, epochs_run=epochs_run, history=history, stop_reason=stop_reason)


def predict(model: Mlp, features: np.ndarray) -> int:
    """Class code for one standardized feature vector; ties pick the smallest code."""
    probs = forward(model, np.asarray(features, dtype=float).reshape(1, -1))
    return int(probs[0].argmax())


def predict_batch(model: Mlp, X: np.ndarray) -> np.ndarray:
    return forward(model, X).argmax(axis=1)


def save_mlp(
    model: Mlp,
    path: str | Path,
    feature_means: np.ndarray,
    feature_stds: np.ndarray,
) -> None:
    """Write one self-describing .npz file: config, scaling, float64 parameters."""
    meta = {
        "format": "pillarstab-mlp",
        "version": 1,
        "activation": model.activation.value,
        "elu_alpha": model.elu_alpha,
        "layer_dims": list(model.layer_dims),
    }
    arrays: dict[str, np.ndarray] = {
        "meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8),
        "feature_means": np.asarray(feature_means, dtype=float),
        "feature_stds": np.asarray(feature_stds, dtype=float),
    }
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"w{i}"] = np.asarray(w, dtype=float)
        arrays[f"b{i}"] = np.asarray(b, dtype=float)
    with open(path, "wb") as handle:
        np.savez(handle, **arrays)


def load_mlp(path: str | Path) -> tuple[Mlp, np.ndarray, np.ndarray]:
    """Inverse of :func:`save_mlp`; reproduces bit-identical predictions."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("format") != "pillarstab-mlp":
            raise ValueError(f"{path} is not a saved model file")
        n_layers = len(meta["layer_dims"]) - 1
        model = Mlp(
            weights=[data[f"w{i}"] for i in range(n_layers)],
            biases=[data[f"b{i}"] for i in range(n_layers)],
            activation=Activation(meta["activation"]),
            elu_alpha=float(meta["elu_alpha"]),
        )
        return model, data["feature_means"], data["feature_stds"]
