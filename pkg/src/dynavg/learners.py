"""Local learning algorithms: predictors, losses and optimizer updates.

Models are flat parameter vectors.  A :class:`PredictorSpec` fixes how that
vector is split into layers; all gradients are computed analytically.

Losses are *summed* over a mini-batch, and the L2 term ``l2/2 * ||f||^2`` is
added once per batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import ConfigurationError, DataError, NumericError
from .params import as_params

PredictorKind = Literal["linear", "mlp"]
LossKind = Literal["squared", "logistic", "cross_entropy"]
OptimizerKind = Literal["sgd", "adam", "rmsprop"]


@dataclass(frozen=True)
class PredictorSpec:
    kind: PredictorKind = "linear"
    input_dim: int = 1
    hidden_units: int = 16
    activation: Literal["tanh", "relu"] = "tanh"
    # 1 means a scalar output (regression / binary score), k >= 2 a k-class head
    outputs: int = 1

    def __post_init__(self):
        if self.kind not in ("linear", "mlp"):
            raise ConfigurationError(f"unknown predictor kind {self.kind!r}")
        if self.activation not in ("tanh", "relu"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.input_dim < 1 or self.hidden_units < 1 or self.outputs < 1:
            raise ConfigurationError("predictor dimensions must be positive")

    def layers(self) -> list[tuple[tuple[int, int], int, int]]:
        """``(weight_shape, fan_in, fan_out)`` per dense layer, in storage order."""
        if self.kind == "linear":
            return [((self.outputs, self.input_dim), self.input_dim, self.outputs)]
        h = self.hidden_units
        return [((h, self.input_dim), self.input_dim, h),
                ((self.outputs, h), h, self.outputs)]

    @property
    def num_params(self) -> int:
        return sum(r * c + r for (r, c), _, _ in self.layers())


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind = "squared"
    l2: float = 0.0

    def __post_init__(self):
        if self.kind not in ("squared", "logistic", "cross_entropy"):
            raise ConfigurationError(f"unknown loss kind {self.kind!r}")
        if not self.l2 >= 0:
            raise ConfigurationError("l2 regularization must be nonnegative")


@dataclass
class LabeledBatch:
    features: np.ndarray   # (B, input_dim)
    labels: np.ndarray     # (B,)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if self.features.shape[0] < 1:
            raise DataError("batch must contain at least one sample")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels")

    def __len__(self) -> int:
        return self.features.shape[0]

    @staticmethod
    def concat(batches: list["LabeledBatch"]) -> "LabeledBatch":
        return LabeledBatch(np.concatenate([b.features for b in batches]),
                            np.concatenate([b.labels for b in batches]))


def _unpack(spec: PredictorSpec, f: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    if f.shape != (spec.num_params,):
        raise ConfigurationError(
            f"model has {f.size} parameters, predictor expects {spec.num_params}")
    out, pos = [], 0
    for (rows, cols), _, _ in spec.layers():
        W = f[pos:pos + rows * cols].reshape(rows, cols)
        pos += rows * cols
        b = f[pos:pos + rows]
        pos += rows
        out.append((W, b))
    return out


def _activate(spec: PredictorSpec, a: np.ndarray) -> np.ndarray:
    return np.tanh(a) if spec.activation == "tanh" else np.maximum(a, 0.0)


def _forward(spec: PredictorSpec, f: np.ndarray, X: np.ndarray):
    if X.shape[1] != spec.input_dim:
        raise ConfigurationError(
            f"features have width {X.shape[1]}, predictor expects {spec.input_dim}")
    layers = _unpack(spec, f)
    if spec.kind == "linear":
        (W, b), = layers
        return X @ W.T + b, None
    (W1, b1), (W2, b2) = layers
    A = X @ W1.T + b1
    H = _activate(spec, A)
    return H @ W2.T + b2, (A, H)


def outputs(spec: PredictorSpec, f, X) -> np.ndarray:
    """Raw head outputs (scores or logits), shape ``(B, outputs)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return _forward(spec, np.asarray(f, dtype=np.float64), X)[0]


def predict(spec: PredictorSpec, f, x):
    """Prediction for one feature vector or a batch of rows.

    Scalar heads return the raw score; k-class heads return softmax
    probabilities.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    Z = outputs(spec, f, x.reshape(1, -1) if single else x)
    if spec.outputs == 1:
        Z = Z[:, 0]
    else:
        Z = np.exp(Z - Z.max(axis=1, keepdims=True))
        Z /= Z.sum(axis=1, keepdims=True)
    return Z[0] if single else Z


def _class_indices(spec: PredictorSpec, y: np.ndarray) -> np.ndarray:
    idx = y.astype(np.int64)
    if np.any(idx != y) or np.any(idx < 0) or np.any(idx >= spec.outputs):
        raise DataError(f"labels must be class indices in [0, {spec.outputs})")
    return idx


def _head_loss(spec: PredictorSpec, kind: LossKind, Z: np.ndarray, y: np.ndarray):
    """Summed data loss and its derivative with respect to the head outputs."""
    if kind == "cross_entropy":
        if spec.outputs < 2:
            raise ConfigurationError("cross_entropy needs a k-class head (outputs >= 2)")
        idx = _class_indices(spec, y)
        shifted = Z - Z.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(shifted).sum(axis=1))
        rows = np.arange(len(idx))
        loss = float(np.sum(logsum - shifted[rows, idx]))
        dZ = np.exp(shifted - logsum[:, None])
        dZ[rows, idx] -= 1.0
        return loss, dZ
    if spec.outputs != 1:
        raise ConfigurationError(f"{kind} loss needs a scalar head (outputs = 1)")
    z = Z[:, 0]
    if kind == "squared":
        r = z - y
        return float(0.5 * r @ r), r[:, None]
    if np.any((y != 0.0) & (y != 1.0)):
        raise DataError("logistic loss expects labels in {0, 1}")
    loss = float(np.sum(np.logaddexp(0.0, z) - y * z))
    sig = np.exp(-np.logaddexp(0.0, -z))
    return loss, (sig - y)[:, None]


def loss_and_grad(spec: PredictorSpec, loss: LossSpec, f, batch: LabeledBatch):
    """Summed batch loss (plus one L2 term) and its exact gradient."""
    f = np.asarray(f, dtype=np.float64)
    X, y = batch.features, batch.labels
    Z, cache = _forward(spec, f, X)
    value, dZ = _head_loss(spec, loss.kind, Z, y)

    grads = []
    if spec.kind == "linear":
        grads.append((dZ.T @ X, dZ.sum(axis=0)))
    else:
        (W1, _), (W2, _) = _unpack(spec, f)
        A, H = cache
        dH = dZ @ W2
        dA = dH * (1.0 - H * H) if spec.activation == "tanh" else dH * (A > 0)
        grads.append((dA.T @ X, dA.sum(axis=0)))
        grads.append((dZ.T @ H, dZ.sum(axis=0)))
    grad = np.concatenate([part for gW, gb in grads for part in (gW.ravel(), gb)])

    if loss.l2 > 0:
        value += 0.5 * loss.l2 * float(f @ f)
        grad += loss.l2 * f
    return value, grad


def glorot_init(spec: PredictorSpec, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    parts = []
    for (rows, cols), fan_in, fan_out in spec.layers():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        parts.append(rng.uniform(-limit, limit, size=rows * cols))
        parts.append(np.zeros(rows))
    return np.concatenate(parts)


def perturb_init(spec: PredictorSpec, base: np.ndarray, eps: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Add uniform noise of relative scale ``eps`` to a shared initialization.

    The noise range of each layer (weights and bias) is ``eps`` times that
    layer's Glorot limit.  ``eps == 0`` returns an unmodified copy.
    """
    f = np.array(base, dtype=np.float64)
    if eps == 0:
        return f
    pos = 0
    for (rows, cols), fan_in, fan_out in spec.layers():
        n = rows * cols + rows
        limit = eps * np.sqrt(6.0 / (fan_in + fan_out))
        f[pos:pos + n] += rng.uniform(-limit, limit, size=n)
        pos += n
    return f


@dataclass
class OptimizerState:
    kind: OptimizerKind = "sgd"
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float = 0.9
    eps: float = 1e-8
    step: int = 0
    first_moment: np.ndarray | None = field(default=None, repr=False)
    second_moment: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam", "rmsprop"):
            raise ConfigurationError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise ConfigurationError("learning rate must be positive")

    def _accumulators(self, d: int):
        if self.second_moment is None:
            self.first_moment = np.zeros(d)
            self.second_moment = np.zeros(d)
        elif self.second_moment.shape != (d,):
            raise ConfigurationError("optimizer accumulators do not match model dimension")
        return self.first_moment, self.second_moment


def _checked_grad(f, grad) -> tuple[np.ndarray, np.ndarray]:
    f = np.asarray(f, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if f.shape != grad.shape:
        raise ConfigurationError(f"gradient shape {grad.shape} != model shape {f.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("gradient contains non-finite entries")
    return f, grad


def _require(opt: OptimizerState, kind: str) -> None:
    if opt.kind != kind:
        raise ConfigurationError(f"{kind} step called on a {opt.kind} optimizer")


def sgd_step(opt: OptimizerState, f, grad) -> np.ndarray:
    _require(opt, "sgd")
    f, grad = _checked_grad(f, grad)
    opt.step += 1
    return f - opt.lr * grad


def adam_step(opt: OptimizerState, f, grad) -> np.ndarray:
    """Adam with bias-corrected first and second moments."""
    _require(opt, "adam")
    f, grad = _checked_grad(f, grad)
    m, v = opt._accumulators(f.size)
    opt.step += 1
    m *= opt.beta1
    m += (1.0 - opt.beta1) * grad
    v *= opt.beta2
    v += (1.0 - opt.beta2) * grad * grad
    m_hat = m / (1.0 - opt.beta1 ** opt.step)
    v_hat = v / (1.0 - opt.beta2 ** opt.step)
    return f - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)


def rmsprop_step(opt: OptimizerState, f, grad) -> np.ndarray:
    _require(opt, "rmsprop")
    f, grad = _checked_grad(f, grad)
    _, s = opt._accumulators(f.size)
    opt.step += 1
    s *= opt.rho
    s += (1.0 - opt.rho) * grad * grad
    return f - opt.lr * grad / (np.sqrt(s) + opt.eps)


_STEPS = {"sgd": sgd_step, "adam": adam_step, "rmsprop": rmsprop_step}


def optimizer_step(opt: OptimizerState, f, grad) -> np.ndarray:
    return _STEPS[opt.kind](opt, f, grad)


@dataclass
class Learner:
    predictor: PredictorSpec
    loss: LossSpec
    opt: OptimizerState
    model: np.ndarray

    def __post_init__(self):
        self.model = as_params(self.model, self.predictor.num_params)


def local_round(learner: Learner, batch: LabeledBatch) -> float:
    """One optimizer step on ``batch``; returns the loss the model suffered.

    The loss is evaluated on the model *before* the update.
    """
    value, grad = loss_and_grad(learner.predictor, learner.loss, learner.model, batch)
    learner.model = optimizer_step(learner.opt, learner.model, grad)
    return value
