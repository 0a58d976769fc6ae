"""Graph operators consumed by the convolution layers."""

from __future__ import annotations

from typing import Literal

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components

LambdaMethod = Literal["auto", "power", "two"]


class AsymmetricAdjacencyError(ValueError):
    pass


def _as_csr(a) -> sp.csr_matrix:
    m = sp.csr_matrix(a, dtype=np.float64)
    m.sum_duplicates()
    m.sort_indices()
    return m


def normalized_laplacian(a) -> sp.csr_matrix:
    """``I - D^-1/2 A D^-1/2``; rows of isolated nodes are standard basis rows."""
    a = _as_csr(a)
    n = a.shape[0]
    if a.shape != (n, n):
        raise AsymmetricAdjacencyError(f"adjacency must be square, got {a.shape}")
    if (a - a.T).count_nonzero() or a.diagonal().any() or (a.data < 0).any():
        raise AsymmetricAdjacencyError("adjacency must be symmetric, nonnegative and zero on the diagonal")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = np.zeros(n)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    d = sp.diags(inv)
    lap = sp.identity(n, format="csr") - d @ a @ d
    lap = sp.csr_matrix(lap)
    lap.sort_indices()
    return lap


def has_bipartite_component(a) -> bool:
    """True if some connected component with at least one edge is 2-colourable."""
    a = _as_csr(a)
    n = a.shape[0]
    if a.nnz == 0:
        return False
    n_comp, comp = connected_components(a, directed=False)
    n_edges = a.nnz // 2
    sizes = np.bincount(comp, minlength=n_comp)
    if n_edges == n - n_comp:
        return bool(np.any(sizes > 1))  # a forest
    colour = np.full(n, -1, dtype=np.int64)
    for c in np.flatnonzero(sizes > 1):
        root = int(np.flatnonzero(comp == c)[0])
        order, pred = breadth_first_order(a, root, directed=False)
        depth = np.zeros(n, dtype=np.int64)
        for v in order[1:]:
            depth[v] = depth[pred[v]] + 1
        colour[order] = depth[order] % 2
        rows = np.repeat(np.arange(n), np.diff(a.indptr))
        inside = comp[rows] == c
        if np.all(colour[rows[inside]] != colour[a.indices[inside]]):
            return True
    return False


def power_lambda_max(lap: sp.csr_matrix, iterations: int = 50, tol: float = 1e-8) -> float:
    """Largest eigenvalue by power iteration (Rayleigh quotient), deterministic start."""
    n = lap.shape[0]
    if n == 0:
        return 1.0
    v = np.random.default_rng(0).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iterations):
        w = lap @ v
        new = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0:
            return 1.0
        v = w / norm
        if lam and abs(new - lam) <= tol * abs(new):
            lam = new
            break
        lam = new
    return lam


def lambda_max(a, method: LambdaMethod = "auto") -> float:
    """Largest eigenvalue of the normalized Laplacian of ``a``.

    ``auto`` returns exactly 2 when some edged component is bipartite (always
    the case for trees), 1 for an edgeless graph, and otherwise a Lanczos
    estimate. ``power`` runs plain power iteration, which converges from below
    and so can push the scaled spectrum slightly past 1. ``two`` is the common
    shortcut.
    """
    a = _as_csr(a)
    if method == "two":
        return 2.0
    if a.nnz == 0:
        return 1.0
    lap = normalized_laplacian(a)
    if method == "power":
        return power_lambda_max(lap)
    if method != "auto":
        raise ValueError(f"unknown lambda_max method {method!r}")
    if has_bipartite_component(a):
        return 2.0
    n = a.shape[0]
    if n <= 256:
        return float(np.linalg.eigvalsh(lap.toarray())[-1])
    from scipy.sparse.linalg import eigsh

    return float(eigsh(lap, k=1, which="LA", return_eigenvectors=False, v0=np.ones(n))[0])


def scaled_laplacian(a, method: LambdaMethod = "auto") -> sp.csr_matrix:
    """``2 L / lambda_max - I`` of the symmetric adjacency ``a``."""
    lap = normalized_laplacian(a)
    lam = lambda_max(a, method)
    n = lap.shape[0]
    out = sp.csr_matrix((2.0 / lam) * lap - sp.identity(n))
    out.sort_indices()
    return out


def diffusion_operators(w) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Forward ``D_O^-1 W`` and backward ``D_I^-1 W^T`` transition matrices.

    Nodes with zero out-degree (resp. in-degree) get zero rows.
    """
    w = _as_csr(w)
    if (w.data < 0).any():
        raise ValueError("directed adjacency must be nonnegative")
    out_deg = np.asarray(w.sum(axis=1)).ravel()
    in_deg = np.asarray(w.sum(axis=0)).ravel()

    def inv(d):
        r = np.zeros_like(d)
        r[d > 0] = 1.0 / d[d > 0]
        return sp.diags(r)

    po = sp.csr_matrix(inv(out_deg) @ w)
    pi = sp.csr_matrix(inv(in_deg) @ w.T)
    po.sort_indices()
    pi.sort_indices()
    return po, pi
