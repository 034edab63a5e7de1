"""Dense MLP classifier with exact reverse-mode gradients.

Tensors are plain ``float64`` numpy arrays. A :class:`ParameterSet` holds the
(weight, bias) pairs of a ReLU MLP; gradients and per-parameter learning
rates use the same container so they can be combined elementwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

DEFAULT_DIMS = (784, 100, 100, 10)


class ShapeError(ValueError):
    pass


class InvalidConfigError(ValueError):
    pass


class InvalidLabelError(ValueError):
    pass


@dataclass
class ParameterSet:
    """Weights ``[out x in]`` and biases ``[out]`` of each linear layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def total_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @property
    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.weights, self.biases))

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "ParameterSet":
        return ParameterSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, dims: Sequence[int], vec: np.ndarray) -> "ParameterSet":
        vec = np.asarray(vec, dtype=np.float64)
        weights, biases, pos = [], [], 0
        for n_in, n_out in zip(dims[:-1], dims[1:]):
            weights.append(vec[pos : pos + n_in * n_out].reshape(n_out, n_in).copy())
            pos += n_in * n_out
            biases.append(vec[pos : pos + n_out].copy())
            pos += n_out
        if pos != vec.size:
            raise ShapeError(f"flat vector has {vec.size} entries, dims {list(dims)} need {pos}")
        return cls(weights, biases)

    @classmethod
    def full_like(cls, other: "ParameterSet", value: float) -> "ParameterSet":
        return cls(
            [np.full_like(w, value) for w in other.weights],
            [np.full_like(b, value) for b in other.biases],
        )

    def locate(self, index: int) -> tuple[int, str, tuple[int, ...]]:
        """Map a flat index to ``(layer, 'weight'|'bias', position)``."""
        if not 0 <= index < self.total_count:
            raise IndexError(index)
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if index < w.size:
                return k, "weight", np.unravel_index(index, w.shape)
            index -= w.size
            if index < b.size:
                return k, "bias", (index,)
            index -= b.size
        raise AssertionError("unreachable")

    def congruent(self, other: "ParameterSet") -> bool:
        return len(self.weights) == len(other.weights) and all(
            a.shape == b.shape for a, b in zip(self.arrays(), other.arrays())
        )

    def map(self, fn) -> "ParameterSet":
        return ParameterSet([fn(w) for w in self.weights], [fn(b) for b in self.biases])

    def combine(self, other: "ParameterSet", fn) -> "ParameterSet":
        if not self.congruent(other):
            raise ShapeError("parameter sets are not shape-congruent")
        return ParameterSet(
            [fn(a, b) for a, b in zip(self.weights, other.weights)],
            [fn(a, b) for a, b in zip(self.biases, other.biases)],
        )


# Gradients share the parameter layout.
GradientSet = ParameterSet


def init_params(seed: int, dims: Sequence[int] = DEFAULT_DIMS) -> ParameterSet:
    """Glorot-uniform weights, zero biases."""
    dims = list(dims)
    if len(dims) < 2 or any(int(d) < 1 for d in dims):
        raise InvalidConfigError(f"need at least two positive layer extents, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return ParameterSet(weights, biases)


def _check_input(params: ParameterSet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[1]:
        raise ShapeError(f"input shape {x.shape} does not match in-dimension {params.weights[0].shape[1]}")
    return x


def _forward_cache(params: ParameterSet, x: np.ndarray):
    acts = [x]
    pre = []
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = z if k == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts, pre


def forward(params: ParameterSet, x: np.ndarray) -> np.ndarray:
    """Logits of the MLP; ReLU between layers, affine output."""
    x = _check_input(params, x)
    acts, _ = _forward_cache(params, x)
    return acts[-1]


def _check_labels(labels, n_classes: int, batch: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size != batch:
        raise ShapeError(f"{labels.size} labels for a batch of {batch}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InvalidLabelError(f"labels must lie in [0, {n_classes})")
    return labels


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels) -> float:
    """Mean negative log-likelihood with a max-shifted log-sum-exp."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits.shape[1], logits.shape[0])
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(log_norm - z[np.arange(len(labels)), labels]))


def loss(params: ParameterSet, x, labels) -> float:
    return cross_entropy(forward(params, x), labels)


def backward(params: ParameterSet, x, labels) -> tuple[float, GradientSet]:
    """Loss and exact gradient of mean cross-entropy w.r.t. every parameter."""
    x = _check_input(params, x)
    acts, pre = _forward_cache(params, x)
    logits = acts[-1]
    labels = _check_labels(labels, logits.shape[1], logits.shape[0])
    n = x.shape[0]

    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    norm = e.sum(axis=1)
    value = float(np.mean(np.log(norm) - z[np.arange(n), labels]))

    delta = e / norm[:, None]
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    n_layers = len(params.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for k in range(n_layers - 1, -1, -1):
        gw[k] = delta.T @ acts[k]
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ params.weights[k]) * (pre[k - 1] > 0)
    return value, ParameterSet(gw, gb)


def _loss_at(weights, biases, x, labels) -> float:
    h = x
    last = len(weights) - 1
    for k, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w.T + b
        if k != last:
            h = np.maximum(h, 0)
    z = h - h.max(axis=1, keepdims=True)
    return np.mean(np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(labels)), labels])


def finite_diff_grad(params: ParameterSet, x, labels, eps: float = 1e-5, dtype=np.float64) -> GradientSet:
    """Central-difference gradient, one coordinate at a time.

    ``dtype=np.longdouble`` evaluates the loss in extended precision, which
    shrinks round-off enough for tight checks on small networks.
    """
    if eps <= 0:
        raise InvalidConfigError("eps must be positive")
    x = _check_input(params, x).astype(dtype)
    labels = _check_labels(labels, params.weights[-1].shape[0], x.shape[0])
    weights = [w.astype(dtype) for w in params.weights]
    biases = [b.astype(dtype) for b in params.biases]
    eps = dtype(eps)
    grads = []
    for arr in [a for pair in zip(weights, biases) for a in pair]:
        view = arr.reshape(-1)
        g = np.empty(view.size, dtype=np.float64)
        for i in range(view.size):
            orig = view[i]
            view[i] = orig + eps
            up = _loss_at(weights, biases, x, labels)
            view[i] = orig - eps
            down = _loss_at(weights, biases, x, labels)
            view[i] = orig
            g[i] = (up - down) / (2 * eps)
        grads.append(g.reshape(arr.shape))
    return ParameterSet(grads[0::2], grads[1::2])


Scale = Union[float, ParameterSet]


def axpy_params(dst: ParameterSet, scale: Scale, g: GradientSet) -> ParameterSet:
    """Return ``dst - scale * g`` with a scalar or per-parameter ``scale``."""
    if not dst.congruent(g):
        raise ShapeError("parameters and gradient are not shape-congruent")
    if isinstance(scale, ParameterSet):
        if not dst.congruent(scale):
            raise ShapeError("per-parameter scale is not shape-congruent")
        return ParameterSet(
            [p - a * d for p, a, d in zip(dst.weights, scale.weights, g.weights)],
            [p - a * d for p, a, d in zip(dst.biases, scale.biases, g.biases)],
        )
    s = float(scale)
    return ParameterSet(
        [p - s * d for p, d in zip(dst.weights, g.weights)],
        [p - s * d for p, d in zip(dst.biases, g.biases)],
    )


def relative_error(a: ParameterSet | np.ndarray, b: ParameterSet | np.ndarray, floor: float = 1e-5) -> float:
    """Max elementwise ``|a-b| / max(|a|, |b|, floor)``.

    The floor acts as an absolute tolerance on near-zero entries, where
    central differences are limited by round-off rather than truncation.
    """
    a = a.flat() if isinstance(a, ParameterSet) else np.asarray(a, dtype=np.float64).ravel()
    b = b.flat() if isinstance(b, ParameterSet) else np.asarray(b, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
