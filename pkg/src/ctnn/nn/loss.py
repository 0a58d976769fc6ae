from __future__ import annotations

from typing import Optional

import numpy as np


class LabelRangeError(ValueError):
    pass


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_xent(logits: np.ndarray, labels: np.ndarray, weights: Optional[np.ndarray] = None):
    """Weighted mean cross-entropy over rows and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"need {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise LabelRangeError(f"labels must lie in [0, {c})")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"need {n} weights, got shape {w.shape}")
    total = w.sum()
    if not total > 0:
        raise ValueError("weights must have a positive sum")
    # normalizing first makes any constant weight vector bitwise equal to uniform
    w = w / total
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = float(-(w * logp[rows, labels]).sum())
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad *= w[:, None]
    return loss, grad
