"""Dense numeric helpers shared by the learning modules.

Tensors are plain 2-D ``float64`` numpy arrays. Randomness always goes
through :func:`make_rng`, which wraps numpy's PCG64 bit generator: the
stream for a given seed is fixed by numpy's compatibility policy and is
identical across platforms.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ConfigError, ShapeError

LR_BOUNDS = (0.001, 0.01)


def as_tensor(x) -> np.ndarray:
    """Coerce to a 2-D float64 array (scalars -> 1x1, vectors -> 1xn)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(1, -1)
    return a


def make_rng(seed, *stream) -> np.random.Generator:
    """Seeded PCG64 generator; extra ints derive an independent sub-stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


def uniform_init(rng: np.random.Generator, shape, scale: float = 0.1) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


def glorot_init(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def matmul(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x):
    """Logistic function without overflow for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = 0.5 * (1.0 + np.tanh(0.5 * x))
    return out if out.ndim else float(out)


def softplus(x):
    """ln(1 + e^x), overflow safe."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def log_sigmoid(x):
    return -softplus(-np.asarray(x, dtype=np.float64))


_ELEMENTWISE = {
    "tanh": np.tanh,
    "sigmoid": sigmoid,
    "exp": np.exp,
}


def elementwise(op: str, t) -> np.ndarray:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return np.asarray(fn(as_tensor(t)), dtype=np.float64)


def check_lr(lr: float, bounds=LR_BOUNDS) -> float:
    if not (bounds[0] <= lr <= bounds[1]):
        raise ConfigError(f"learning rate {lr} outside {bounds}")
    return lr


def sgd_step(param, grad, lr: float, bounds=LR_BOUNDS) -> np.ndarray:
    """Return ``param - lr * grad``; ``bounds=None`` skips the lr range check."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise ShapeError(f"sgd_step: param {param.shape} vs grad {grad.shape}")
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    if bounds is not None:
        check_lr(lr, bounds)
    return param - lr * grad


def numeric_gradient(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``; ``x`` is not modified."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f(x)
        flat[i] = old - eps
        fm = f(x)
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite objective at coordinate {i}")
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def check_gradient(f, x, analytic_grad, eps: float = 1e-5) -> float:
    """Max entrywise ``|analytic - numeric| / max(1, |numeric|)``."""
    numeric = numeric_gradient(f, x, eps)
    analytic = np.asarray(analytic_grad, dtype=np.float64).reshape(numeric.shape)
    if numeric.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))
