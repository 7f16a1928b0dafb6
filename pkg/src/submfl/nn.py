"""Fully-connected ReLU network with hand-derived gradients and Adam.

Parameters live in one flat float64 vector. The flat order is layer-major;
within a layer the weight matrix (out_dim x in_dim, row-major) comes first,
followed by the bias vector. ``ParamSet.weights`` and ``ParamSet.biases``
are read-only views into that vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError("a network needs at least an input and an output layer")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive, got {self.layer_sizes}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @cached_property
    def layout(self) -> list[tuple[slice, tuple[int, int], slice]]:
        """Per layer: (weight slice, weight shape, bias slice) into the flat vector."""
        out, offset = [], 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = slice(offset, offset + fan_out * fan_in)
            offset = w.stop
            b = slice(offset, offset + fan_out)
            offset = b.stop
            out.append((w, (fan_out, fan_in), b))
        return out

    @cached_property
    def n_params(self) -> int:
        return self.layout[-1][2].stop

    @cached_property
    def n_prunable(self) -> int:
        return sum(w.stop - w.start for w, _, _ in self.layout)

    @cached_property
    def weight_index(self) -> np.ndarray:
        """Flat positions of all weight-matrix entries, in flat order."""
        return np.concatenate([np.arange(w.start, w.stop) for w, _, _ in self.layout])


@dataclass(frozen=True, eq=False)
class ParamSet:
    spec: NetworkSpec
    flat: np.ndarray

    def __post_init__(self):
        flat = np.array(self.flat, dtype=np.float64, copy=True).reshape(-1)
        if flat.size != self.spec.n_params:
            raise ValueError(f"expected {self.spec.n_params} parameters, got {flat.size}")
        if not np.all(np.isfinite(flat)):
            raise ValueError("parameters must be finite")
        flat.flags.writeable = False
        object.__setattr__(self, "flat", flat)

    @classmethod
    def from_layers(cls, spec: NetworkSpec, weights, biases) -> ParamSet:
        parts = []
        for (_, shape, _), w, b in zip(spec.layout, weights, biases, strict=True):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64).reshape(-1)
            if w.shape != shape or b.shape != (shape[0],):
                raise ValueError(f"layer shape mismatch: expected {shape}, got {w.shape}/{b.shape}")
            parts += [w.reshape(-1), b]
        return cls(spec, np.concatenate(parts))

    @property
    def n_params(self) -> int:
        return self.spec.n_params

    @property
    def weights(self) -> list[np.ndarray]:
        return [self.flat[w].reshape(shape) for w, shape, _ in self.spec.layout]

    @property
    def biases(self) -> list[np.ndarray]:
        return [self.flat[b] for _, _, b in self.spec.layout]

    def with_flat(self, flat: np.ndarray) -> ParamSet:
        return ParamSet(self.spec, flat)

    def equals(self, other: ParamSet) -> bool:
        """Bitwise equality of spec and values."""
        return self.spec == other.spec and np.array_equal(self.flat, other.flat)


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 64
    local_epochs: int = 3

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.local_epochs < 0:
            raise ValueError("local_epochs must be non-negative")


@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, n_params: int) -> AdamState:
        return cls(np.zeros(n_params), np.zeros(n_params), 0)


def init_network(spec: NetworkSpec, seed: int) -> ParamSet:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    flat = np.zeros(spec.n_params)
    for w, (fan_out, fan_in), _ in spec.layout:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        flat[w] = rng.uniform(-limit, limit, size=fan_out * fan_in)
    return ParamSet(spec, flat)


def _check_inputs(params: ParamSet, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.spec.n_inputs:
        raise ValueError(
            f"input dimension mismatch: network expects {params.spec.n_inputs}, got shape {x.shape}"
        )
    return x


def _forward_cache(params: ParamSet, x: np.ndarray) -> list[np.ndarray]:
    # activations[i] is the input to layer i; activations[-1] are the logits
    activations = [x]
    weights, biases = params.weights, params.biases
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = activations[-1] @ w.T + b
        activations.append(np.maximum(z, 0.0) if i < last else z)
    return activations


def forward(params: ParamSet, inputs) -> np.ndarray:
    return _forward_cache(params, _check_inputs(params, inputs))[-1]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_labels(labels, n: int, n_classes: int) -> np.ndarray:
    y = np.asarray(labels).reshape(-1)
    if y.size != n:
        raise ValueError(f"{n} inputs but {y.size} labels")
    if n == 0:
        raise ValueError("empty batch")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integers")
        y = y.astype(np.int64)
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError(f"label out of range [0, {n_classes})")
    return y


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    logp = _log_softmax(logits)
    return float(-logp[np.arange(len(labels)), labels].mean())


def loss_and_grads(params: ParamSet, inputs, labels) -> tuple[float, ParamSet]:
    """Mean softmax cross-entropy over the batch and its exact gradient.

    The gradient is returned as a ``ParamSet`` so it shares the flat layout.
    """
    x = _check_inputs(params, inputs)
    y = _check_labels(labels, len(x), params.spec.n_classes)
    acts = _forward_cache(params, x)
    logp = _log_softmax(acts[-1])
    n = len(y)
    loss = float(-logp[np.arange(n), y].mean())

    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grad = np.empty(params.n_params)
    weights = params.weights
    for i in range(len(weights) - 1, -1, -1):
        w_slice, _, b_slice = params.spec.layout[i]
        grad[w_slice] = (delta.T @ acts[i]).reshape(-1)
        grad[b_slice] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i]) * (acts[i] > 0)
    return loss, ParamSet(params.spec, grad)


def adam_step(
    params: ParamSet, grads: ParamSet, state: AdamState, hyper: Hyperparams
) -> tuple[ParamSet, AdamState]:
    g = np.asarray(grads.flat if isinstance(grads, ParamSet) else grads, dtype=np.float64)
    if g.shape != params.flat.shape or state.m.shape != params.flat.shape:
        raise ValueError("gradient / optimizer state shape does not match parameters")
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite gradient")
    if hyper.weight_decay:
        g = g + hyper.weight_decay * params.flat
    t = state.t + 1
    m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * g
    v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * (g * g)
    m_hat = m / (1.0 - hyper.beta1**t)
    v_hat = v / (1.0 - hyper.beta2**t)
    flat = params.flat - hyper.learning_rate * m_hat / (np.sqrt(v_hat) + hyper.epsilon)
    return ParamSet(params.spec, flat), AdamState(m, v, t)


def evaluate(params: ParamSet, features, labels, batch_size: int = 4096) -> tuple[float, float]:
    """Return (mean cross-entropy, accuracy). Argmax ties go to the lowest class."""
    x = _check_inputs(params, features)
    y = _check_labels(labels, len(x), params.spec.n_classes)
    total_loss, correct = 0.0, 0
    for start in range(0, len(x), batch_size):
        logits = _forward_cache(params, x[start : start + batch_size])[-1]
        yb = y[start : start + batch_size]
        logp = _log_softmax(logits)
        total_loss += float(-logp[np.arange(len(yb)), yb].sum())
        correct += int(np.count_nonzero(np.argmax(logits, axis=1) == yb))
    return total_loss / len(y), correct / len(y)
