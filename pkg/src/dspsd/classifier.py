"""Sigmoid MLP producing a scalar Ponzi margin, with the logistic loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numerics import glorot_init, sigmoid, softplus

PONZI_LABEL, NORMAL_LABEL = "Ponzi", "Normal"


@dataclass
class ClassifierParams:
    weights: list  # hidden layer matrices, then the (1, last) margin projection
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) < 2:
            raise ShapeError("need >= 1 hidden layer plus the margin layer")
        for prev, W in zip(self.weights, self.weights[1:]):
            if W.shape[1] != prev.shape[0]:
                raise ShapeError("layer chain is inconsistent")
        if self.weights[-1].shape[0] != 1:
            raise ShapeError("margin layer must have one output")

    @classmethod
    def init(cls, input_dim: int, widths, rng: np.random.Generator):
        dims = [input_dim, *widths, 1]
        W = [glorot_init(rng, dims[i + 1], dims[i]) for i in range(len(dims) - 1)]
        return cls(W, [np.zeros(d) for d in dims[1:]])

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def mlp_forward(x, params: ClassifierParams):
    """Return ``(margin, p_ponzi, cache)``.

    Hidden layers use the logistic transfer. The two-logit softmax over
    ``[0, margin]`` reduces to ``p_ponzi = sigmoid(margin)``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x[None] if single else x
    if a.shape[1] != params.input_dim:
        raise ShapeError(f"input dim {a.shape[1]} != {params.input_dim}")
    acts = [a]
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        a = sigmoid(a @ W.T + b)
        acts.append(a)
    margin = (a @ params.weights[-1].T + params.biases[-1])[:, 0]
    cache = {"acts": acts, "single": single}
    if single:
        return float(margin[0]), float(sigmoid(margin[0])), cache
    return margin, sigmoid(margin), cache


def mlp_backward(cache, dmargin, params: ClassifierParams):
    """Gradients of a loss with ``dL/dmargin`` given; returns ``(dW, db, dx)``."""
    acts = cache["acts"]
    g = np.asarray(dmargin, dtype=np.float64).reshape(-1, 1)
    dW = [None] * len(params.weights)
    db = [None] * len(params.weights)
    for k in range(len(params.weights) - 1, -1, -1):
        inp = acts[k]
        dW[k] = g.T @ inp
        db[k] = g.sum(axis=0)
        g = g @ params.weights[k]
        if k > 0:
            g = g * inp * (1.0 - inp)
    dx = g[0] if cache["single"] else g
    return dW, db, dx


def classification_loss(margins, labels, lam: float = 0.0, theta=()) -> float:
    """Sum of logistic losses plus ``lam * ||theta||^2``."""
    m = np.atleast_1d(np.asarray(margins, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels, dtype=np.float64))
    if m.shape != y.shape:
        raise ShapeError("margins and labels differ in length")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    data = np.sum(y * softplus(-m) + (1.0 - y) * softplus(m))
    reg = lam * sum(float(np.sum(t * t)) for t in theta)
    return float(data + reg)


def loss_gradient(margins, labels) -> np.ndarray:
    """d(data loss)/d(margin) = sigmoid(margin) - y."""
    return sigmoid(np.atleast_1d(np.asarray(margins, dtype=np.float64))) - np.asarray(labels, dtype=np.float64)


def predict(margin: float, threshold: float = 0.0) -> str:
    """Ponzi iff ``margin > threshold`` (ties go to Normal)."""
    return PONZI_LABEL if margin > threshold else NORMAL_LABEL
