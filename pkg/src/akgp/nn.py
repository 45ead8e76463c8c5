"""Two-hidden-layer perceptron with hand-written backpropagation.

The network maps ``(N, D)`` inputs to ``(N, out_dim)`` raw scores through
``tanh`` hidden layers and a linear output layer.  It is the parametric
backbone for the attentive kernel's weight/membership functions, the Gibbs
lengthscale function and the DKL feature map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when array shapes disagree with the network layout."""


class DegenerateInputError(ValueError):
    """Raised when an operation is undefined for the given values."""


@dataclass
class MLPParams:
    """Weights ``(fan_in, fan_out)`` and biases of input -> H -> H -> out."""

    layer_weights: list[np.ndarray]
    layer_biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.layer_weights) != 3 or len(self.layer_biases) != 3:
            raise ShapeError("MLPParams needs exactly two hidden layers")
        for i, (w, b) in enumerate(zip(self.layer_weights, self.layer_biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i > 0 and self.layer_weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i} fan-in does not match previous fan-out")

    @property
    def in_dim(self) -> int:
        return self.layer_weights[0].shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.layer_weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layer_weights[2].shape[1]

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.layer_weights, self.layer_biases))

    def copy(self) -> "MLPParams":
        return MLPParams([w.copy() for w in self.layer_weights],
                         [b.copy() for b in self.layer_biases])

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.layer_weights, self.layer_biases):
            parts += [w.ravel(), b]
        return np.concatenate(parts)

    def unflatten(self, vector: np.ndarray) -> "MLPParams":
        """Return params of the same layout filled from a flat vector."""
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.size,):
            raise ShapeError(f"expected {self.size} values, got {vector.shape}")
        weights, biases, pos = [], [], 0
        for w, b in zip(self.layer_weights, self.layer_biases):
            weights.append(vector[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
            biases.append(vector[pos:pos + b.size].copy())
            pos += b.size
        return MLPParams(weights, biases)


# Gradients share the parameter layout exactly.
MLPGradients = MLPParams


def init_mlp(in_dim: int, hidden_dim: int, out_dim: int,
             rng: np.random.Generator) -> MLPParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases."""
    dims = [in_dim, hidden_dim, hidden_dim, out_dim]
    if min(dims) < 1:
        raise ShapeError(f"all layer sizes must be positive, got {dims}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases)


def _check_input(params: MLPParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.in_dim:
        raise ShapeError(f"input of shape {X.shape} does not match in_dim={params.in_dim}")
    return X


def _forward_cache(params: MLPParams, X: np.ndarray):
    (W1, W2, W3), (b1, b2, b3) = params.layer_weights, params.layer_biases
    h1 = np.tanh(X @ W1 + b1)
    h2 = np.tanh(h1 @ W2 + b2)
    return h1, h2, h2 @ W3 + b3


def mlp_forward(params: MLPParams, X: np.ndarray) -> np.ndarray:
    X = _check_input(params, X)
    return _forward_cache(params, X)[2]


def mlp_forward_backward(params: MLPParams, X: np.ndarray):
    """Forward pass that also returns a closure computing parameter gradients.

    The closure takes ``upstream`` of shape ``(N, out_dim)`` and returns the
    gradient of ``sum(upstream * output)``.
    """
    X = _check_input(params, X)
    h1, h2, out = _forward_cache(params, X)
    W1, W2, W3 = params.layer_weights

    def backward(upstream: np.ndarray) -> MLPGradients:
        upstream = np.asarray(upstream, dtype=float)
        if upstream.shape != out.shape:
            raise ShapeError(f"upstream gradient {upstream.shape} != output {out.shape}")
        gW3 = h2.T @ upstream
        gb3 = upstream.sum(axis=0)
        d2 = (upstream @ W3.T) * (1.0 - h2 ** 2)
        gW2 = h1.T @ d2
        gb2 = d2.sum(axis=0)
        d1 = (d2 @ W2.T) * (1.0 - h1 ** 2)
        gW1 = X.T @ d1
        gb1 = d1.sum(axis=0)
        return MLPParams([gW1, gW2, gW3], [gb1, gb2, gb3])

    return out, backward


def mlp_backward(params: MLPParams, X: np.ndarray, upstream_grad: np.ndarray) -> MLPGradients:
    return mlp_forward_backward(params, X)[1](upstream_grad)


def softmax_rows(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise DegenerateInputError("softmax input contains non-finite values")
    e = np.exp(raw - raw.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_vjp(probs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Pull ``upstream`` back through a row softmax whose output is ``probs``."""
    return probs * (upstream - np.sum(upstream * probs, axis=1, keepdims=True))


def l2_normalize_rows(W: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    norms = np.linalg.norm(W, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInputError("cannot normalize an all-zero row")
    return W / norms


def l2_normalize_rows_vjp(W: np.ndarray, unit: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Pull ``upstream`` back through ``unit = W / ||W||`` row-wise."""
    norms = np.linalg.norm(W, axis=1, keepdims=True)
    return (upstream - unit * np.sum(upstream * unit, axis=1, keepdims=True)) / norms
