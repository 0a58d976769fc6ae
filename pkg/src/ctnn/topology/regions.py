"""Region adjacency graphs over a pixel grid.

Every node is a spatially connected set of pixels. The finest such graph has one
node per valid pixel; contracting edges between nodes that share a key gives the
flat-zone graph at that key (e.g. a quantized elevation level).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from ..raster import ElevationGrid, pixel_pairs


@dataclass(frozen=True)
class RegionGraph:
    """Nodes are pixel sets; ``edges`` holds unordered spatial adjacencies ``u < v``.

    Node ids are canonical: nodes are numbered by their first pixel in raster
    order. ``elevation`` is the mean (perturbed) elevation of a node's pixels
    and ``level`` its shared integer key.
    """

    shape: tuple[int, int]
    pixel_to_node: np.ndarray
    level: np.ndarray
    elevation: np.ndarray
    edges: np.ndarray
    pixel_elevation: np.ndarray
    connectivity: int = 4

    @property
    def n_nodes(self) -> int:
        return int(self.level.shape[0])

    @property
    def sizes(self) -> np.ndarray:
        p = self.pixel_to_node
        return np.bincount(p[p >= 0], minlength=self.n_nodes)

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Symmetric adjacency as ``(indptr, indices)`` with sorted neighbor lists."""
        n = self.n_nodes
        if self.edges.size == 0:
            return np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
        u, v = self.edges[:, 0], self.edges[:, 1]
        m = sp.csr_matrix(
            (np.ones(2 * u.size, dtype=np.int8), (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(n, n)
        )
        m.sort_indices()
        return m.indptr.astype(np.int64), m.indices.astype(np.int64)

    def sweep_rank(self) -> np.ndarray:
        """Position of each node in the ascending (elevation, id) order."""
        order = np.lexsort((np.arange(self.n_nodes), self.elevation))
        rank = np.empty(self.n_nodes, dtype=np.int64)
        rank[order] = np.arange(self.n_nodes)
        return rank


def _node_means(pixel_to_node: np.ndarray, pixel_elevation: np.ndarray, n: int) -> np.ndarray:
    valid = pixel_to_node >= 0
    nodes = pixel_to_node[valid]
    sums = np.bincount(nodes, weights=pixel_elevation[valid], minlength=n)
    return sums / np.bincount(nodes, minlength=n)


def grid_graph(grid: ElevationGrid, levels=None, connectivity: int = 4) -> RegionGraph:
    """One node per valid pixel, numbered in raster order."""
    valid = grid.valid.ravel()
    n = int(valid.sum())
    p2n = np.full(valid.size, -1, dtype=np.int64)
    p2n[valid] = np.arange(n)
    pairs = pixel_pairs(grid.shape, connectivity)
    keep = valid[pairs[:, 0]] & valid[pairs[:, 1]]
    edges = p2n[pairs[keep]]
    flat = np.where(valid, grid.values.ravel(), np.nan)
    if levels is None:
        lev = np.zeros(n, dtype=np.int64)
    else:
        lev = np.asarray(levels, dtype=np.int64).ravel()[valid]
    return RegionGraph(grid.shape, p2n, lev, flat[valid].copy(), edges, flat, connectivity)


def contract(graph: RegionGraph, keys: np.ndarray) -> tuple[RegionGraph, np.ndarray]:
    """Merge adjacent nodes with equal ``keys``.

    Returns the coarse graph and the assignment ``fine node -> coarse node``.
    Coarse nodes are the connected components of same-key nodes, so they are
    exactly the flat zones of ``keys`` over the original pixels.
    """
    keys = np.asarray(keys, dtype=np.int64)
    n = graph.n_nodes
    if keys.shape != (n,):
        raise ValueError(f"need one key per node ({n}), got shape {keys.shape}")
    e = graph.edges
    same = e[keys[e[:, 0]] == keys[e[:, 1]]] if e.size else e
    adj = sp.csr_matrix((np.ones(len(same), dtype=np.int8), (same[:, 0], same[:, 1])), shape=(n, n))
    n_coarse, comp = connected_components(adj, directed=False)
    # canonical numbering: coarse nodes ordered by their first fine node (hence first pixel)
    first = np.full(n_coarse, n, dtype=np.int64)
    np.minimum.at(first, comp, np.arange(n))
    relabel = np.empty(n_coarse, dtype=np.int64)
    relabel[np.argsort(first, kind="stable")] = np.arange(n_coarse)
    assign = relabel[comp]

    p2n = graph.pixel_to_node
    new_p2n = np.where(p2n >= 0, assign[np.maximum(p2n, 0)], -1)
    level = np.empty(n_coarse, dtype=np.int64)
    level[assign] = keys
    if e.size:
        ce = np.sort(assign[e], axis=1)
        ce = ce[ce[:, 0] != ce[:, 1]]
        ce = np.unique(ce, axis=0) if ce.size else ce.reshape(0, 2)
    else:
        ce = e
    elev = _node_means(new_p2n, graph.pixel_elevation, n_coarse)
    coarse = RegionGraph(graph.shape, new_p2n, level, elev, ce, graph.pixel_elevation, graph.connectivity)
    return coarse, assign
