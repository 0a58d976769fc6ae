"""Join trees, split trees, and their merge into a contour tree.

The sweep follows the classic construction: visit nodes by decreasing (join) or
increasing (split) elevation and track superlevel / sublevel components with a
union-find. The merge peels leaves off both trees at once.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Literal

import numpy as np

from ..raster import ElevationGrid, has_unique_values
from .regions import RegionGraph, grid_graph


class DuplicateElevationError(ValueError):
    """Raised when a pixel-level sweep is asked to run on non-unique elevations."""


class _UnionFind:
    """Disjoint sets with path compression and union by rank."""

    __slots__ = ("parent", "rank")

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        """Join the sets rooted at ``a`` and ``b``; returns the surviving root."""
        if self.rank[a] < self.rank[b]:
            a, b = b, a
        self.parent[b] = a
        if self.rank[a] == self.rank[b]:
            self.rank[a] += 1
        return a


@dataclass(frozen=True)
class MergeTree:
    """``parent[v]`` is the next node below (join) or above (split) ``v``; -1 at roots."""

    parent: np.ndarray
    kind: Literal["join", "split"]
    graph: RegionGraph

    @property
    def n_nodes(self) -> int:
        return int(self.parent.shape[0])

    def children(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for v, p in enumerate(self.parent.tolist()):
            if p >= 0:
                out[p].append(v)
        return out

    def leaves(self) -> np.ndarray:
        has_child = np.zeros(self.n_nodes, dtype=bool)
        p = self.parent
        has_child[p[p >= 0]] = True
        return np.flatnonzero(~has_child)


def sweep(graph: RegionGraph, kind: Literal["join", "split"]) -> MergeTree:
    """Merge tree of ``graph`` under the (elevation, id) total order."""
    n = graph.n_nodes
    indptr, indices = graph.csr()
    indptr, indices = indptr.tolist(), indices.tolist()
    order = np.lexsort((np.arange(n), graph.elevation))
    if kind == "join":
        order = order[::-1]
    elif kind != "split":
        raise ValueError(f"kind must be 'join' or 'split', got {kind!r}")
    uf = _UnionFind(n)
    lowest = list(range(n))
    seen = bytearray(n)
    parent = [-1] * n
    for v in order.tolist():
        seen[v] = 1
        root = v
        for q in indices[indptr[v] : indptr[v + 1]]:
            if not seen[q]:
                continue
            rq = uf.find(q)
            if rq == root:
                continue
            parent[lowest[rq]] = v
            root = uf.union(root, rq)
            lowest[root] = v
    return MergeTree(np.array(parent, dtype=np.int64), kind, graph)


def _pixel_graph(grid: ElevationGrid, connectivity: int) -> RegionGraph:
    if not has_unique_values(grid):
        raise DuplicateElevationError("elevations must be pairwise distinct; apply perturb_unique first")
    return grid_graph(grid, connectivity=connectivity)


def build_join_tree(grid: ElevationGrid, connectivity: int = 4) -> MergeTree:
    """Join tree over pixels: leaves are maxima, the root is the global minimum."""
    return sweep(_pixel_graph(grid, connectivity), "join")


def build_split_tree(grid: ElevationGrid, connectivity: int = 4) -> MergeTree:
    """Split tree over pixels: leaves are minima, the root is the global maximum."""
    return sweep(_pixel_graph(grid, connectivity), "split")


def merge_edges(join: MergeTree, split: MergeTree) -> np.ndarray:
    """Contour-tree edges ``(high, low)`` from a join and a split tree.

    A node is an upper leaf when it has no join children and at most one split
    child, and a lower leaf symmetrically. Among current leaves the smallest
    node id is always processed next, with the upper-leaf test first; on region
    graphs with loops the result depends on this order, so it is fixed.
    """
    if join.kind != "join" or split.kind != "split":
        raise ValueError("merge_edges expects (join tree, split tree)")
    if join.graph is not split.graph and not (
        join.n_nodes == split.n_nodes and np.array_equal(join.graph.pixel_to_node, split.graph.pixel_to_node)
    ):
        raise ValueError("join and split trees cover different pixel sets")
    n = join.n_nodes
    jp = join.parent.tolist()
    sp_ = split.parent.tolist()
    jc = [set() for _ in range(n)]
    sc = [set() for _ in range(n)]
    for v in range(n):
        if jp[v] >= 0:
            jc[jp[v]].add(v)
        if sp_[v] >= 0:
            sc[sp_[v]].add(v)

    alive = bytearray(b"\x01") * n
    heap = list(range(n))
    edges: list[tuple[int, int]] = []
    removed = 0
    while heap:
        v = heapq.heappop(heap)
        if not alive[v]:
            continue
        if not jc[v] and len(sc[v]) <= 1:
            upper = True
        elif not sc[v] and len(jc[v]) <= 1:
            upper = False
        else:
            continue
        # peel v off the tree it is a leaf of, splice it out of the other
        if upper:
            par, kids, opar, okids = jp, jc, sp_, sc
        else:
            par, kids, opar, okids = sp_, sc, jp, jc
        u = par[v]
        alive[v] = 0
        removed += 1
        touched = []
        if u >= 0:
            edges.append((v, u) if upper else (u, v))
            kids[u].discard(v)
            touched.append(u)
        p = opar[v]
        if p >= 0:
            okids[p].discard(v)
            touched.append(p)
        for c in okids[v]:
            opar[c] = p
            if p >= 0:
                okids[p].add(c)
            touched.append(c)
        okids[v].clear()
        for w in touched:
            if alive[w]:
                heapq.heappush(heap, w)
    if removed != n:
        raise RuntimeError(f"merge stalled with {n - removed} nodes left; join/split trees are inconsistent")
    if not edges:
        return np.zeros((0, 2), dtype=np.int64)
    return np.array(edges, dtype=np.int64)
