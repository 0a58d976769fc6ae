"""Contour trees over flat zones, plus feature/label transport between pixels and nodes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ..raster import ElevationGrid, FeatureRaster, LabelRaster, QuantizedGrid, perturb_unique, quantize
from .mergetree import MergeTree, merge_edges, sweep
from .regions import RegionGraph, contract, grid_graph


class TreeInvariantError(RuntimeError):
    pass


@dataclass(frozen=True)
class ContourTree:
    """A polytree whose nodes are contours (flat zones) of a surface.

    ``edges[i] = (u, v)`` points downhill: ``elevation[u] > elevation[v]``.
    ``graph`` is the region adjacency graph the tree was built on; coarser
    trees are derived from it, not from the tree edges.
    """

    graph: RegionGraph
    edges: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.graph.n_nodes

    @property
    def shape(self) -> tuple[int, int]:
        return self.graph.shape

    @property
    def pixel_to_node(self) -> np.ndarray:
        return self.graph.pixel_to_node

    @property
    def level(self) -> np.ndarray:
        return self.graph.level

    @property
    def elevation(self) -> np.ndarray:
        return self.graph.elevation

    @property
    def sizes(self) -> np.ndarray:
        return self.graph.sizes

    def members(self) -> list[np.ndarray]:
        """Flat pixel indices of every node, each sorted ascending."""
        p2n = self.pixel_to_node
        pix = np.flatnonzero(p2n >= 0)
        nodes = p2n[pix]
        order = np.argsort(nodes, kind="stable")
        bounds = np.cumsum(np.bincount(nodes, minlength=self.n_nodes))[:-1]
        return np.split(pix[order], bounds)

    def partition(self) -> frozenset:
        return frozenset(frozenset(m.tolist()) for m in self.members())

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(u), int(v)) for u, v in self.edges}

    def check(self) -> None:
        """Raise :class:`TreeInvariantError` unless this is a downhill spanning forest."""
        n = self.n_nodes
        e = self.edges
        if e.size and np.any(self.elevation[e[:, 0]] <= self.elevation[e[:, 1]]):
            raise TreeInvariantError("edge not strictly downhill")
        n_comp_graph = _n_components(n, self.graph.edges)
        if len(e) != n - n_comp_graph:
            raise TreeInvariantError(f"{len(e)} edges for {n} nodes in {n_comp_graph} components")
        if _n_components(n, e) != n_comp_graph:
            raise TreeInvariantError("tree components differ from the region graph's")
        p2n = self.pixel_to_node
        if np.any(np.bincount(p2n[p2n >= 0], minlength=n) == 0):
            raise TreeInvariantError("node without pixels")


def _n_components(n: int, edges: np.ndarray) -> int:
    from scipy.sparse.csgraph import connected_components

    if n == 0:
        return 0
    e = np.asarray(edges).reshape(-1, 2)
    adj = sp.csr_matrix((np.ones(len(e), dtype=np.int8), (e[:, 0], e[:, 1])), shape=(n, n))
    return int(connected_components(adj, directed=False)[0])


def tree_on_graph(graph: RegionGraph) -> ContourTree:
    """Contour tree of a region graph via join/split sweeps and their merge."""
    edges = merge_edges(sweep(graph, "join"), sweep(graph, "split"))
    return ContourTree(graph, edges)


def merge_trees(join: MergeTree, split: MergeTree) -> ContourTree:
    """Augmented contour tree: one node per node of the trees' common graph."""
    return ContourTree(join.graph, merge_edges(join, split))


def collapse_contours(tree: ContourTree, q) -> ContourTree:
    """Collapse each flat zone of ``q`` into one node.

    ``q`` is a :class:`QuantizedGrid` (per-pixel levels) or an integer array of
    per-node keys. Nodes of ``tree`` must each lie within one level. The result
    is rebuilt from the contracted region graph; contracting tree edges instead
    could join same-level pixels that are not spatially connected.
    """
    if isinstance(q, QuantizedGrid):
        if q.shape != tree.shape:
            raise ValueError(f"quantized grid {q.shape} does not match tree grid {tree.shape}")
        pix_levels = q.levels.ravel()
        p2n = tree.pixel_to_node
        valid = p2n >= 0
        nodes = p2n[valid]
        lv = pix_levels[valid]
        keys = np.empty(tree.n_nodes, dtype=np.int64)
        keys[nodes] = lv
        if np.any(keys[nodes] != lv):
            raise TreeInvariantError("a node spans several quantized levels")
    else:
        keys = np.asarray(q, dtype=np.int64)
    coarse, _ = contract(tree.graph, keys)
    return tree_on_graph(coarse)


def contour_tree(
    grid: ElevationGrid,
    precision: float,
    connectivity: int = 4,
    seed: int = 0,
    epsilon: Optional[float] = None,
) -> ContourTree:
    """Flat-zone contour tree of ``grid`` quantized at ``precision``."""
    eps = precision * 1e-3 if epsilon is None else epsilon
    pert = perturb_unique(grid, seed, eps, precision)
    q = quantize(grid, precision)
    base = grid_graph(pert, q.levels, connectivity)
    zones, _ = contract(base, base.level)
    return tree_on_graph(zones)


def augmented_contour_tree(grid: ElevationGrid, connectivity: int = 4) -> ContourTree:
    """Pixel-level contour tree of a grid with distinct elevations."""
    from .mergetree import build_join_tree, build_split_tree

    return merge_trees(build_join_tree(grid, connectivity), build_split_tree(grid, connectivity))


def node_adjacency(tree: ContourTree) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Directed downhill adjacency ``W`` and its symmetrization ``A = W + W^T``."""
    n = tree.n_nodes
    e = tree.edges.reshape(-1, 2)
    w = sp.csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    w.sort_indices()
    a = (w + w.T).tocsr()
    a.sort_indices()
    return w, a


def aggregate_features(tree: ContourTree, feats: FeatureRaster) -> np.ndarray:
    """``(n_nodes, bands)`` mean feature vector of each node's pixels."""
    if feats.shape != tree.shape:
        raise ValueError(f"feature raster {feats.shape} does not match tree grid {tree.shape}")
    p2n = tree.pixel_to_node
    valid = p2n >= 0
    nodes = p2n[valid]
    vals = feats.values.reshape(-1, feats.bands)[valid]
    counts = np.bincount(nodes, minlength=tree.n_nodes).astype(np.float64)
    out = np.empty((tree.n_nodes, feats.bands))
    for b in range(feats.bands):
        out[:, b] = np.bincount(nodes, weights=vals[:, b], minlength=tree.n_nodes) / counts
    return out


def aggregate_labels(tree: ContourTree, labels: LabelRaster) -> tuple[np.ndarray, np.ndarray]:
    """Majority class per node (ties to the smaller id) and pixel counts.

    Pixels masked in either the tree or the label raster do not vote; nodes
    that end up with no labelled pixel get class 0 and count 0.
    """
    if labels.shape != tree.shape:
        raise ValueError(f"label raster {labels.shape} does not match tree grid {tree.shape}")
    p2n = tree.pixel_to_node
    use = (p2n >= 0) & labels.valid.ravel()
    nodes = p2n[use]
    cls = labels.classes.ravel()[use]
    c = labels.n_classes
    votes = np.bincount(nodes * c + cls, minlength=tree.n_nodes * c).reshape(tree.n_nodes, c)
    return votes.argmax(axis=1).astype(np.int64), votes.sum(axis=1).astype(np.int64)


def project_to_pixels(tree: ContourTree, node_classes, n_classes: int = 2) -> LabelRaster:
    """Paint every pixel with its node's class; nodata pixels stay masked."""
    node_classes = np.asarray(node_classes, dtype=np.int64)
    if node_classes.shape != (tree.n_nodes,):
        raise ValueError(f"need {tree.n_nodes} node classes, got shape {node_classes.shape}")
    p2n = tree.pixel_to_node
    valid = p2n >= 0
    out = np.zeros(p2n.size, dtype=np.int64)
    out[valid] = node_classes[p2n[valid]]
    mask = None if valid.all() else ~valid.reshape(tree.shape)
    n_classes = max(n_classes, int(node_classes.max(initial=0)) + 1)
    return LabelRaster(out.reshape(tree.shape), n_classes, mask)
