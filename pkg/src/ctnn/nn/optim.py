from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    """Momentum SGD with per-epoch exponential learning-rate decay and L2 on kernels."""

    lr: float = 1e-4
    momentum: float = 0.9
    decay: float = 0.99
    l2: float = 5e-2
    velocity: dict = field(default_factory=dict)

    def effective_lr(self, epoch: int) -> float:
        return self.lr * self.decay**epoch


def momentum_step(params: dict, grads: dict, state: OptimizerState, epoch: int, kernels=()) -> dict:
    """In-place update ``v = m v + (g + l2 p)``, ``p -= lr_e v``; L2 only for names in ``kernels``."""
    lr = state.effective_lr(epoch)
    kernels = set(kernels)
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if name in kernels and state.l2:
            g = g + state.l2 * p
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(p)
        elif v.shape != p.shape:
            raise ValueError(f"velocity for {name} has shape {v.shape}, parameter has {p.shape}")
        v *= state.momentum
        v += g
        p -= lr * v
    return params
