"""Minimal numpy MLP with explicit backward passes."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import DTYPE

_GELU_K = np.sqrt(2.0 / np.pi)


def _identity(x):
    return x, np.ones_like(x)


def _tanh(x):
    y = np.tanh(x)
    return y, 1.0 - y * y


def _relu(x):
    return np.maximum(x, 0), (x > 0).astype(x.dtype)


def _gelu(x):
    # tanh approximation
    inner = _GELU_K * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)
    dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_K * (1.0 + 3 * 0.044715 * x * x)
    return y, dy


ACTIVATIONS = {"identity": _identity, "tanh": _tanh, "relu": _relu, "gelu": _gelu}


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, prefix: str,
             init: str = "uniform") -> dict[str, np.ndarray]:
    """Parameters for an affine stack ``sizes[0] -> ... -> sizes[-1]``.

    ``uniform`` draws weights and biases from U(-1/sqrt(fan_in), 1/sqrt(fan_in));
    ``identity`` sets square weights to I and biases to 0.
    """
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if init == "identity":
            if fan_in != fan_out:
                raise ValueError("identity init needs square layers")
            w = np.eye(fan_in)
            b = np.zeros(fan_out)
        elif init == "uniform":
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=fan_out)
        else:
            raise ValueError(f"unknown init {init!r}")
        params[f"{prefix}.{i}.weight"] = w.astype(DTYPE)
        params[f"{prefix}.{i}.bias"] = b.astype(DTYPE)
    return params


def n_layers(params: dict[str, np.ndarray], prefix: str) -> int:
    return sum(1 for k in params if k.startswith(prefix + ".") and k.endswith(".weight"))


def mlp_forward(params, prefix: str, x: np.ndarray, activation: str):
    """Apply the stack row-wise to ``x`` of shape (rows, in). Returns (y, cache)."""
    act = ACTIVATIONS[activation]
    depth = n_layers(params, prefix)
    cache = []
    h = x
    for i in range(depth):
        w, b = params[f"{prefix}.{i}.weight"], params[f"{prefix}.{i}.bias"]
        pre = h @ w + b
        if i < depth - 1:
            out, dact = act(pre)
        else:
            out, dact = pre, None
        cache.append((h, dact))
        h = out
    return h, cache


def mlp_backward(params, prefix: str, cache, dy: np.ndarray):
    """Backprop ``dy`` through the stack. Returns (dx, grads)."""
    grads = {}
    g = dy
    for i in reversed(range(len(cache))):
        h, dact = cache[i]
        if dact is not None:
            g = g * dact
        grads[f"{prefix}.{i}.weight"] = h.T @ g
        grads[f"{prefix}.{i}.bias"] = g.sum(axis=0)
        g = g @ params[f"{prefix}.{i}.weight"].T
    return g, grads
