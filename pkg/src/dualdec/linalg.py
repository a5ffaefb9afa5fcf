"""Matrix primitives, fully-connected layer passes with hand-derived gradients,
Glorot initialization, and the Adam optimizer.

Dense matrices are float64 ``numpy.ndarray``s, sparse matrices are scipy CSR
with float64 values. Everything is 64-bit: the gradient checks that guard this
code are not trustworthy at single precision. All functions here are pure;
only ``Adam.step`` mutates state (the parameters and its own moments).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.special import expit

from .errors import ShapeError, TrainingError

ACTIVATIONS = ("relu", "sigmoid", "identity")


def activate(name: str, s: np.ndarray) -> np.ndarray:
    """Apply the named activation elementwise."""
    if name == "relu":
        return np.maximum(s, 0.0)
    if name == "sigmoid":
        return expit(s)
    if name == "identity":
        return s
    raise ShapeError(f"unknown activation: {name!r}")


def activation_grad(name: str, out: np.ndarray) -> np.ndarray:
    """Derivative of the activation, expressed through its output value."""
    if name == "relu":
        return (out > 0.0).astype(np.float64)
    if name == "sigmoid":
        return out * (1.0 - out)
    if name == "identity":
        return np.ones_like(out)
    raise ShapeError(f"unknown activation: {name!r}")


@dataclass
class LinearLayer:
    """A fully-connected layer: out = activation(x @ weight + bias)."""

    weight: np.ndarray  # in_dim x out_dim
    bias: np.ndarray    # out_dim
    activation: str = "identity"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def copy(self) -> "LinearLayer":
        return LinearLayer(self.weight.copy(), self.bias.copy(), self.activation)


def make_layer(in_dim: int, out_dim: int, activation: str, rng: np.random.Generator) -> LinearLayer:
    """Glorot-initialized weights, zero bias."""
    if activation not in ACTIVATIONS:
        raise ShapeError(f"unknown activation: {activation!r}")
    return LinearLayer(glorot_init(in_dim, out_dim, rng), np.zeros(out_dim), activation)


def linear_forward(layer: LinearLayer, x: np.ndarray) -> np.ndarray:
    """activation(x @ W + b); rows of x are samples."""
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ShapeError(
            f"linear_forward: input has shape {x.shape}, layer expects cols={layer.in_dim}"
        )
    return activate(layer.activation, x @ layer.weight + layer.bias)


def linear_backward(layer: LinearLayer, x: np.ndarray, upstream: np.ndarray):
    """Gradients of sum(upstream * layer_output) w.r.t. (W, b, x).

    Recomputes the forward pass internally, so it is a pure function of its
    arguments (no hidden caches).
    """
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ShapeError(f"linear_backward: input shape {x.shape} vs in_dim {layer.in_dim}")
    if upstream.shape != (x.shape[0], layer.out_dim):
        raise ShapeError(
            f"linear_backward: upstream shape {upstream.shape}, "
            f"expected {(x.shape[0], layer.out_dim)}"
        )
    out = linear_forward(layer, x)
    d = upstream * activation_grad(layer.activation, out)
    grad_w = x.T @ d
    grad_b = d.sum(axis=0)
    grad_x = d @ layer.weight.T
    return grad_w, grad_b, grad_x


def spmm(s, d: np.ndarray) -> np.ndarray:
    """Sparse @ dense product."""
    if s.shape[1] != d.shape[0]:
        raise ShapeError(f"spmm: {s.shape} @ {d.shape}")
    return np.asarray(s @ d)


def glorot_init(in_dim: int, out_dim: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform in +/- sqrt(6 / (in_dim + out_dim))."""
    if in_dim < 1 or out_dim < 1:
        raise ShapeError(f"glorot_init: dims must be >= 1, got ({in_dim}, {out_dim})")
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-bound, bound, size=(in_dim, out_dim))


def densify(s) -> np.ndarray:
    """Sparse to dense float64; passthrough for arrays."""
    if sparse.issparse(s):
        return np.asarray(s.todense(), dtype=np.float64)
    return np.asarray(s, dtype=np.float64)


class Adam:
    """Adam with bias correction.

    step() applies one update in place to every array in ``params`` and
    increments the step counter once. Moment buffers are keyed by parameter
    name and zero-initialized on first sight.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"adam: grad shape {g.shape} vs param {p.shape} for {name!r}")
            if not np.all(np.isfinite(g)):
                raise TrainingError(name, f"non-finite gradient for parameter {name!r}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)
