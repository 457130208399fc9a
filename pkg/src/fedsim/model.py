"""Densely connected multilayer classifier with hand-written backprop.

Layer ``j`` (1-based) reads the concatenation of the raw input and the
outputs of layers ``1..j-1`` and emits ``growth`` ReLU units. The softmax
head reads the concatenation of the input and all ``num_layers`` outputs.

Parameter layout in the flat vector, layer by layer and then the head:
``W_j`` (row-major, shape ``(growth, fan_in_j)``) followed by ``b_j``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from fedsim.errors import DimensionError, EmptyBatchError, ParameterError
from fedsim.numkit import ParamVector, RngStream, check_same_length, l2_norm_sq

BASE_LR = 0.001
LR_DECAY_FACTOR = 10
LR_DECAY_EVERY = 30


@dataclass(frozen=True)
class DenseNetConfig:
    input_dim: int
    num_layers: int = 2
    growth: int = 8
    num_classes: int = 2
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 2:
            raise ParameterError("input_dim must be >= 1 and num_classes >= 2")
        if self.num_layers < 0 or (self.num_layers > 0 and self.growth < 1):
            raise ParameterError("num_layers must be >= 0 and growth >= 1")
        if self.activation != "relu":
            raise ParameterError(f"unsupported activation {self.activation!r}")

    def fan_in(self, layer: int) -> int:
        """Input width of 1-based ``layer``; ``num_layers + 1`` is the head."""
        return self.input_dim + (layer - 1) * self.growth

    def shapes(self) -> list[tuple[int, int]]:
        out = [(self.growth, self.fan_in(j)) for j in range(1, self.num_layers + 1)]
        out.append((self.num_classes, self.fan_in(self.num_layers + 1)))
        return out


@dataclass(frozen=True)
class LabeledExample:
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class ProxTerm:
    mu: float
    anchor: ParamVector

    def __post_init__(self):
        if not self.mu >= 0:
            raise ParameterError(f"mu must be >= 0, got {self.mu}")


@dataclass
class AdamWState:
    m: ParamVector
    v: ParamVector
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def fresh(cls, n: int, **hyper) -> "AdamWState":
        return cls(m=np.zeros(n), v=np.zeros(n), **hyper)


def param_count(cfg: DenseNetConfig) -> int:
    return sum(rows * cols + rows for rows, cols in cfg.shapes())


def unpack(params: ParamVector, cfg: DenseNetConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split the flat vector into ``(W, b)`` views, hidden layers then head."""
    if params.shape != (param_count(cfg),):
        raise DimensionError(
            f"expected {param_count(cfg)} parameters, got {params.shape}")
    out = []
    offset = 0
    for rows, cols in cfg.shapes():
        W = params[offset:offset + rows * cols].reshape(rows, cols)
        offset += rows * cols
        b = params[offset:offset + rows]
        offset += rows
        out.append((W, b))
    return out


def init_params(cfg: DenseNetConfig, stream: RngStream) -> ParamVector:
    """He-normal weights (std ``sqrt(2 / fan_in)``), zero biases."""
    gen = stream.generator()
    chunks = []
    for rows, cols in cfg.shapes():
        chunks.append(gen.standard_normal(rows * cols) * np.sqrt(2.0 / cols))
        chunks.append(np.zeros(rows))
    return np.concatenate(chunks)


def as_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    """Accept ``(X, y)`` or a sequence of :class:`LabeledExample`."""
    if isinstance(batch, tuple) and len(batch) == 2:
        X, y = batch
    else:
        batch = list(batch)
        if not batch:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        X = np.stack([np.asarray(ex.features, dtype=np.float64) for ex in batch])
        y = np.array([ex.label for ex in batch], dtype=np.int64)
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.int64)


def _forward(params, cfg, X):
    if X.ndim != 2 or X.shape[1] != cfg.input_dim:
        raise DimensionError(f"expected features of width {cfg.input_dim}, got {X.shape}")
    layers = unpack(params, cfg)
    feats = X
    pre_acts = []
    for W, b in layers[:-1]:
        z = feats @ W.T + b
        pre_acts.append(z)
        feats = np.concatenate([feats, np.maximum(z, 0.0)], axis=1)
    Wh, bh = layers[-1]
    return feats @ Wh.T + bh, feats, pre_acts


def forward_batch(params: ParamVector, cfg: DenseNetConfig, X: np.ndarray) -> np.ndarray:
    return _forward(params, cfg, np.asarray(X, dtype=np.float64))[0]


def forward(params: ParamVector, cfg: DenseNetConfig, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("forward takes a single feature vector")
    return forward_batch(params, cfg, x[None, :])[0]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(np.asarray(logits, dtype=np.float64)))


def softmax_cross_entropy(logits, label: int) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise ParameterError(f"label {label} outside [0, {logits.shape[-1]})")
    return float(-_log_softmax(logits)[label])


def predict_proba(params: ParamVector, cfg: DenseNetConfig, X: np.ndarray) -> np.ndarray:
    return softmax(forward_batch(params, cfg, X))


def predict(params: ParamVector, cfg: DenseNetConfig, X: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(forward_batch(params, cfg, X), axis=1)


def loss_and_grad(
    params: ParamVector,
    cfg: DenseNetConfig,
    batch,
    prox: ProxTerm | None = None,
) -> tuple[float, ParamVector]:
    """Mean cross-entropy over ``batch`` plus the optional proximal penalty,
    and its exact gradient with respect to ``params``."""
    X, y = as_arrays(batch)
    n = y.shape[0]
    if n == 0:
        raise EmptyBatchError("loss_and_grad needs at least one example")
    if np.any(y < 0) or np.any(y >= cfg.num_classes):
        raise ParameterError("label outside [0, num_classes)")

    logits, feats, pre_acts = _forward(params, cfg, X)
    logp = _log_softmax(logits)
    rows = np.arange(n)
    loss = float(np.mean(-logp[rows, y]))

    dlogits = np.exp(logp)
    dlogits[rows, y] -= 1.0
    dlogits /= n

    layers = unpack(params, cfg)
    grads = [None] * len(layers)
    Wh, _ = layers[-1]
    grads[-1] = (dlogits.T @ feats, dlogits.sum(axis=0))
    dfeats = dlogits @ Wh

    d, g = cfg.input_dim, cfg.growth
    for j in range(cfg.num_layers - 1, -1, -1):
        lo = d + j * g
        dz = dfeats[:, lo:lo + g] * (pre_acts[j] > 0)
        W, _ = layers[j]
        grads[j] = (dz.T @ feats[:, :lo], dz.sum(axis=0))
        dfeats[:, :lo] += dz @ W

    grad = np.concatenate([part.reshape(-1) for pair in grads for part in pair])

    if prox is not None and prox.mu != 0:
        # mu == 0 skips the term entirely so the result is bit-identical to FedAvg
        check_same_length(params, prox.anchor)
        diff = params - prox.anchor
        loss += 0.5 * prox.mu * l2_norm_sq(diff)
        grad = grad + prox.mu * diff
    return loss, grad


def sgd_step(params: ParamVector, grad: ParamVector, lr: float) -> ParamVector:
    check_same_length(params, grad)
    if not lr > 0:
        raise ParameterError(f"lr must be positive, got {lr}")
    return params - lr * grad


def adamw_step(
    state: AdamWState, params: ParamVector, grad: ParamVector, lr: float
) -> tuple[ParamVector, AdamWState]:
    """One AdamW update with bias correction and decoupled weight decay."""
    check_same_length(params, grad)
    check_same_length(params, state.m)
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps) - lr * state.weight_decay * params
    return new, replace(state, m=m, v=v, t=t)


def lr_schedule(epoch: int, base_lr: float = BASE_LR,
                factor: float = LR_DECAY_FACTOR, every: int = LR_DECAY_EVERY) -> float:
    """Step decay: ``base_lr`` divided by ``factor`` once per ``every`` epochs."""
    if epoch < 0:
        raise ParameterError(f"epoch must be >= 0, got {epoch}")
    return base_lr / factor ** (epoch // every)
