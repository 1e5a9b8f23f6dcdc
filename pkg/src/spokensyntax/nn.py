"""Minimal numpy building blocks with hand-written backward passes.

Parameters live in flat ``dict[str, ndarray]`` maps so that optimisers,
checkpoints and finite-difference checks can treat every model the same way.
An MLP named ``"score"`` owns ``score.W0, score.b0, score.W1, ...``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

Params = dict[str, np.ndarray]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


def mlp_init(rng: np.random.Generator, name: str, sizes, out_scale: float = 1.0) -> Params:
    """He-style init; the final layer is multiplied by ``out_scale``."""
    params = {}
    n = len(sizes) - 1
    for k in range(n):
        fan_in, fan_out = sizes[k], sizes[k + 1]
        W = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))
        if k == n - 1:
            W *= out_scale
        params[f"{name}.W{k}"] = W
        params[f"{name}.b{k}"] = np.zeros(fan_out)
    return params


def mlp_depth(params: Params, name: str) -> int:
    k = 0
    while f"{name}.W{k}" in params:
        k += 1
    return k


def mlp_forward(params: Params, name: str, x: np.ndarray):
    """GELU between layers, linear output. Returns ``(y, cache)``."""
    depth = mlp_depth(params, name)
    pre = []
    inputs = []
    h = x
    for k in range(depth):
        inputs.append(h)
        z = h @ params[f"{name}.W{k}"] + params[f"{name}.b{k}"]
        if k < depth - 1:
            pre.append(z)
            h = gelu(z)
        else:
            h = z
    return h, (inputs, pre)


def mlp_backward(params: Params, name: str, cache, gy: np.ndarray):
    """Backprop ``gy`` (same shape as the output) -> ``(gx, grads)``."""
    inputs, pre = cache
    depth = len(inputs)
    grads = {}
    g = gy
    for k in range(depth - 1, -1, -1):
        if k < depth - 1:
            g = g * gelu_grad(pre[k])
        h = inputs[k]
        if h.ndim == 1:
            grads[f"{name}.W{k}"] = np.outer(h, g)
            grads[f"{name}.b{k}"] = g.copy()
        else:
            grads[f"{name}.W{k}"] = h.T @ g
            grads[f"{name}.b{k}"] = g.sum(axis=0)
        g = g @ params[f"{name}.W{k}"].T
    return g, grads


def l2_normalize(x: np.ndarray, eps: float = 0.0):
    """Row-wise L2 normalisation. Returns ``(y, norms)``; raises on zero rows."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms <= eps):
        raise FloatingPointError("cannot normalise a zero vector")
    return x / norms, norms


def l2_normalize_backward(y: np.ndarray, norms: np.ndarray, gy: np.ndarray) -> np.ndarray:
    return (gy - y * np.sum(gy * y, axis=-1, keepdims=True)) / norms


def add_grads(total: Params, new: Params, scale: float = 1.0) -> Params:
    for k, v in new.items():
        if k in total:
            total[k] = total[k] + scale * v
        else:
            total[k] = scale * v
    return total


class SGD:
    """SGD with classical momentum over a flat parameter dict (in place)."""

    def __init__(self, params: Params, lr: float, momentum: float = 0.9, clip: float | None = 5.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.clip = clip
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: Params) -> float:
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if not math.isfinite(norm):
            raise FloatingPointError("non-finite gradient")
        scale = 1.0
        if self.clip is not None and norm > self.clip:
            scale = self.clip / norm
        for k, g in grads.items():
            if k not in self.params:
                continue
            v = self.velocity[k]
            v *= self.momentum
            v -= self.lr * scale * g
            self.params[k] += v
        return norm


def numeric_grad(f, params: Params, key: str, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. ``params[key]``."""
    arr = params[key]
    out = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = arr[idx]
        arr[idx] = old + eps
        fp = f()
        arr[idx] = old - eps
        fm = f()
        arr[idx] = old
        out[idx] = (fp - fm) / (2 * eps)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    num = np.linalg.norm(np.ravel(a) - np.ravel(b))
    den = max(np.linalg.norm(np.ravel(a)) + np.linalg.norm(np.ravel(b)), 1e-12)
    return float(num / den)
