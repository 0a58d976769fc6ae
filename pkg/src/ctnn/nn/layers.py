"""Layers with hand-written backward passes.

Every layer keeps its parameters in ``params`` (name -> array, updated in
place by the optimizer). ``forward`` returns ``(out, cache)`` and ``backward``
takes that cache and returns ``(d_input, grads)``. Kernel names are listed in
``kernels``; only those receive weight decay.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp


class MissingCacheError(RuntimeError):
    pass


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, lead: tuple = ()) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=lead + (fan_in, fan_out))


def _need(cache):
    if cache is None:
        raise MissingCacheError("backward called without a forward cache")
    return cache


def _check_input(x: np.ndarray, f_in: int, n: Optional[int] = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != f_in or (n is not None and x.shape[0] != n):
        want = f"({n if n is not None else 'n'}, {f_in})"
        raise ValueError(f"input shape {x.shape} does not match expected {want}")
    return x


@dataclass
class ChebyLayer:
    """Chebyshev graph convolution: ``sum_k T_k(L) X W[k] + b``."""

    W: np.ndarray  # (K, F_in, F_out)
    b: np.ndarray

    kernels = ("W",)

    def __post_init__(self):
        if self.W.ndim != 3 or self.W.shape[0] < 1:
            raise ValueError("ChebyLayer needs W of shape (K>=1, F_in, F_out)")

    @classmethod
    def init(cls, rng, k: int, f_in: int, f_out: int) -> "ChebyLayer":
        return cls(glorot(rng, f_in, f_out, (k,)), np.zeros(f_out))

    @property
    def K(self) -> int:
        return self.W.shape[0]

    @property
    def params(self) -> dict:
        return {"W": self.W, "b": self.b}


def cheby_forward(lhat: sp.spmatrix, x: np.ndarray, layer: ChebyLayer):
    x = _check_input(x, layer.W.shape[1], lhat.shape[0])
    zs = [x]
    if layer.K > 1:
        zs.append(lhat @ x)
    for _ in range(2, layer.K):
        zs.append(2.0 * (lhat @ zs[-1]) - zs[-2])
    out = layer.b + sum(z @ w for z, w in zip(zs, layer.W))
    return out, (lhat, zs, layer)


def cheby_backward(cache, dout: np.ndarray):
    lhat, zs, layer = _need(cache)
    lt = lhat.T
    dz = [dout @ w.T for w in layer.W]
    for k in range(layer.K - 1, 1, -1):
        dz[k - 1] = dz[k - 1] + 2.0 * (lt @ dz[k])
        dz[k - 2] = dz[k - 2] - dz[k]
    if layer.K > 1:
        dz[0] = dz[0] + lt @ dz[1]
    grads = {"W": np.stack([z.T @ dout for z in zs]), "b": dout.sum(axis=0)}
    return dz[0], grads


@dataclass
class DiffusionLayer:
    """Diffusion convolution over a directed graph: ``sum_k (P_O^k X W1[k] + P_I^k X W2[k]) + b``."""

    W1: np.ndarray  # (K, F_in, F_out)
    W2: np.ndarray
    b: np.ndarray

    kernels = ("W1", "W2")

    def __post_init__(self):
        if self.W1.ndim != 3 or self.W1.shape != self.W2.shape or self.W1.shape[0] < 1:
            raise ValueError("DiffusionLayer needs W1, W2 of equal shape (K>=1, F_in, F_out)")

    @classmethod
    def init(cls, rng, k: int, f_in: int, f_out: int) -> "DiffusionLayer":
        return cls(glorot(rng, f_in, f_out, (k,)), glorot(rng, f_in, f_out, (k,)), np.zeros(f_out))

    @property
    def K(self) -> int:
        return self.W1.shape[0]

    @property
    def params(self) -> dict:
        return {"W1": self.W1, "W2": self.W2, "b": self.b}


def _powers(p, x, k):
    zs = [x]
    for _ in range(1, k):
        zs.append(p @ zs[-1])
    return zs


def diffusion_forward(ops: tuple, x: np.ndarray, layer: DiffusionLayer):
    """``ops`` = (D_O^-1 W, D_I^-1 W^T), see :func:`diffusion_operators`."""
    po, pi = ops
    x = _check_input(x, layer.W1.shape[1], po.shape[0])
    zo = _powers(po, x, layer.K)
    zi = _powers(pi, x, layer.K)
    out = layer.b + sum(z @ w for z, w in zip(zo, layer.W1)) + sum(z @ w for z, w in zip(zi, layer.W2))
    return out, (ops, zo, zi, layer)


def _chain_back(p, weights, dout):
    pt = p.T
    acc = dout @ weights[-1].T
    for k in range(len(weights) - 2, -1, -1):
        acc = dout @ weights[k].T + pt @ acc
    return acc


def diffusion_backward(cache, dout: np.ndarray):
    (po, pi), zo, zi, layer = _need(cache)
    dx = _chain_back(po, layer.W1, dout) + _chain_back(pi, layer.W2, dout)
    grads = {
        "W1": np.stack([z.T @ dout for z in zo]),
        "W2": np.stack([z.T @ dout for z in zi]),
        "b": dout.sum(axis=0),
    }
    return dx, grads


@dataclass
class Dense:
    """Per-node affine map, used for the head and for the graph-free ablation."""

    W: np.ndarray
    b: np.ndarray

    kernels = ("W",)

    @classmethod
    def init(cls, rng, f_in: int, f_out: int) -> "Dense":
        return cls(glorot(rng, f_in, f_out), np.zeros(f_out))

    @property
    def params(self) -> dict:
        return {"W": self.W, "b": self.b}


def dense_forward(x: np.ndarray, layer: Dense):
    x = _check_input(x, layer.W.shape[0])
    return x @ layer.W + layer.b, (x, layer)


def dense_backward(cache, dout: np.ndarray):
    x, layer = _need(cache)
    return dout @ layer.W.T, {"W": x.T @ dout, "b": dout.sum(axis=0)}


@dataclass
class NodeNorm:
    """Per-channel normalization across the nodes of one graph."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray = None
    running_var: np.ndarray = None
    eps: float = 1e-5
    momentum: float = 0.9

    kernels = ()

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.running_mean is None:
            self.running_mean = np.zeros_like(self.gamma)
        if self.running_var is None:
            self.running_var = np.ones_like(self.gamma)

    @classmethod
    def init(cls, channels: int, eps: float = 1e-5, momentum: float = 0.9) -> "NodeNorm":
        return cls(np.ones(channels), np.zeros(channels), eps=eps, momentum=momentum)

    @property
    def params(self) -> dict:
        return {"gamma": self.gamma, "beta": self.beta}

    @property
    def state(self) -> dict:
        return {"running_mean": self.running_mean, "running_var": self.running_var}


def node_norm_forward(x: np.ndarray, norm: NodeNorm, mode: str = "train"):
    """``train`` normalizes with this graph's statistics and updates the running ones,
    ``graph`` does the same without the update, ``eval`` uses the running statistics."""
    x = _check_input(x, norm.gamma.size)
    if mode in ("train", "graph"):
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        if mode == "train":
            m = norm.momentum
            norm.running_mean[...] = m * norm.running_mean + (1 - m) * mu
            norm.running_var[...] = m * norm.running_var + (1 - m) * var
    elif mode == "eval":
        mu, var = norm.running_mean, norm.running_var
    else:
        raise ValueError(f"mode must be 'train', 'graph' or 'eval', got {mode!r}")
    inv = 1.0 / np.sqrt(var + norm.eps)
    xhat = (x - mu) * inv
    return xhat * norm.gamma + norm.beta, (xhat, inv, norm, mode)


def node_norm_backward(cache, dout: np.ndarray):
    xhat, inv, norm, mode = _need(cache)
    grads = {"gamma": (dout * xhat).sum(axis=0), "beta": dout.sum(axis=0)}
    dxhat = dout * norm.gamma
    if mode == "eval":
        return dxhat * inv, grads
    dx = inv * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
    return dx, grads


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(mask, dout: np.ndarray):
    return dout * _need(mask)
