"""Multi-precision contour-tree hierarchy and the pooling maps between levels.

Level 0 is the flat-zone tree at the finest precision. Each coarser level
requantizes the previous level's integer levels by the exact precision ratio
and contracts adjacent nodes that now share a level, so every fine node lies in
exactly one coarse node and coarse members are unions of fine members.

Pooling maps are kept as assignment vectors. ``pool`` averages the rows of each
cluster, ``unpool`` broadcasts a coarse row back to its fine nodes.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .raster import ElevationGrid
from .topology import ContourTree, contour_tree, contract, tree_on_graph
from .topology.io import check_header, read_blocks, tree_arrays, tree_from_parts, tree_manifest, write_blocks

HIERARCHY_FORMAT = "ctnn-hierarchy"
HIERARCHY_VERSION = 1


class PrecisionError(ValueError):
    pass


@dataclass(frozen=True)
class PoolingMap:
    """Total assignment ``fine node -> coarse node``.

    As a matrix this is ``P`` with shape ``(n_coarse, n_fine)`` and
    ``P[assign[i], i] = 1``.
    """

    assign: np.ndarray
    n_coarse: int

    def __post_init__(self):
        a = np.asarray(self.assign, dtype=np.int64)
        if a.ndim != 1:
            raise ValueError("assignment must be a vector")
        if a.size and (a.min() < 0 or a.max() >= self.n_coarse):
            raise ValueError("assignment refers to a coarse node out of range")
        if np.any(np.bincount(a, minlength=self.n_coarse) == 0):
            raise ValueError("every coarse node needs at least one fine node")
        a.setflags(write=False)
        object.__setattr__(self, "assign", a)

    @property
    def n_fine(self) -> int:
        return int(self.assign.size)

    @cached_property
    def counts(self) -> np.ndarray:
        return np.bincount(self.assign, minlength=self.n_coarse)

    @cached_property
    def _ref(self) -> np.ndarray:
        # first fine node of every cluster
        ref = np.full(self.n_coarse, self.n_fine, dtype=np.int64)
        np.minimum.at(ref, self.assign, np.arange(self.n_fine))
        return ref

    @cached_property
    def _sum_matrix(self) -> sp.csr_matrix:
        return self.matrix()

    def matrix(self) -> sp.csr_matrix:
        """0/1 matrix ``P`` (n_coarse x n_fine)."""
        m = sp.csr_matrix(
            (np.ones(self.n_fine), (self.assign, np.arange(self.n_fine))), shape=(self.n_coarse, self.n_fine)
        )
        m.sort_indices()
        return m

    def normalized(self, weights: Optional[np.ndarray] = None) -> sp.csr_matrix:
        """Row-normalized ``P``; with ``weights`` each entry is proportional to its fine node's weight."""
        w = np.ones(self.n_fine) if weights is None else np.asarray(weights, dtype=np.float64)
        tot = np.bincount(self.assign, weights=w, minlength=self.n_coarse)
        m = sp.csr_matrix((w / tot[self.assign], (self.assign, np.arange(self.n_fine))), shape=(self.n_coarse, self.n_fine))
        m.sort_indices()
        # entries are integer multiples of 2**-53 summing to exactly 2**53 per row, so every
        # partial sum is representable and row sums are exactly 1 in any summation order
        k = np.rint(m.data * 2.0**53).astype(np.int64)
        last = m.indptr[1:] - 1
        k[last] += 2**53 - np.add.reduceat(k, m.indptr[:-1])
        m.data = k / 2.0**53
        return m

    def segment_sum(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._sum_matrix @ x)


def _check_rows(x: np.ndarray, n: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != n:
        raise ValueError(f"{what} needs a matrix with {n} rows, got shape {x.shape}")
    return x


def pool(x: np.ndarray, pmap: PoolingMap, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Mean of each cluster's rows, optionally weighted (e.g. by pixel counts).

    Computed as a reference row plus the mean deviation from it, so clusters
    whose rows are all equal come out exactly equal to that row.
    """
    x = _check_rows(x, pmap.n_fine, "pool")
    ref = x[pmap._ref]
    dev = x - ref[pmap.assign]
    if weights is None:
        return ref + pmap.segment_sum(dev) / pmap.counts[:, None]
    w = np.asarray(weights, dtype=np.float64)
    tot = np.bincount(pmap.assign, weights=w, minlength=pmap.n_coarse)
    return ref + pmap.segment_sum(dev * w[:, None]) / tot[:, None]


def pool_backward(grad: np.ndarray, pmap: PoolingMap, weights: Optional[np.ndarray] = None) -> np.ndarray:
    grad = _check_rows(grad, pmap.n_coarse, "pool_backward")
    if weights is None:
        return grad[pmap.assign] / pmap.counts[pmap.assign][:, None]
    w = np.asarray(weights, dtype=np.float64)
    tot = np.bincount(pmap.assign, weights=w, minlength=pmap.n_coarse)
    return grad[pmap.assign] * (w / tot[pmap.assign])[:, None]


def unpool(y: np.ndarray, pmap: PoolingMap) -> np.ndarray:
    """Copy every coarse row to the fine nodes of its cluster (``P^T y``)."""
    y = _check_rows(y, pmap.n_coarse, "unpool")
    return y[pmap.assign]


def unpool_backward(grad: np.ndarray, pmap: PoolingMap) -> np.ndarray:
    grad = _check_rows(grad, pmap.n_fine, "unpool_backward")
    return pmap.segment_sum(grad)


@dataclass(frozen=True)
class TreeHierarchy:
    trees: tuple[ContourTree, ...]
    maps: tuple[PoolingMap, ...]
    precisions: tuple[float, ...]
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.maps) != len(self.trees) - 1 or len(self.precisions) != len(self.trees):
            raise ValueError("need one precision per tree and one map per level transition")
        for l, m in enumerate(self.maps):
            if m.n_fine != self.trees[l].n_nodes or m.n_coarse != self.trees[l + 1].n_nodes:
                raise ValueError(f"map {l} shape does not match trees {l} and {l + 1}")

    @property
    def n_levels(self) -> int:
        return len(self.trees)

    @property
    def node_counts(self) -> list[int]:
        return [t.n_nodes for t in self.trees]

    def pixel_counts(self, level: int = 0) -> np.ndarray:
        return self.trees[level].sizes

    def composed_map(self, target: int) -> np.ndarray:
        """Assignment from level-0 nodes to nodes of level ``target``."""
        a = np.arange(self.trees[0].n_nodes)
        for m in self.maps[:target]:
            a = m.assign[a]
        return a

    def check(self) -> None:
        for t in self.trees:
            t.check()
        for l, m in enumerate(self.maps):
            fine, coarse = self.trees[l].pixel_to_node, self.trees[l + 1].pixel_to_node
            valid = fine >= 0
            if not np.array_equal(coarse[valid], m.assign[fine[valid]]) or np.any(coarse[~valid] >= 0):
                raise ValueError(f"map {l} is inconsistent with pixel memberships")


def _validate_precisions(precisions: Sequence[float]) -> list[Fraction]:
    if len(precisions) == 0:
        raise PrecisionError("at least one precision is required")
    exact = [Fraction(str(float(r))) for r in precisions]
    if exact[0] <= 0:
        raise PrecisionError(f"precisions must be positive, got {precisions[0]}")
    for a, b in zip(exact, exact[1:]):
        if b <= a:
            raise PrecisionError(f"precisions must be strictly increasing, got {list(precisions)}")
    for a, b in zip(exact, exact[1:]):
        if (b / a).denominator != 1:
            warnings.warn(
                f"precision {float(b)} is not an integer multiple of {float(a)}; levels are requantized from "
                "the finer level, so they may differ from quantizing elevations directly",
                UserWarning,
                stacklevel=3,
            )
    return exact


def requantize(levels: np.ndarray, ratio: Fraction) -> np.ndarray:
    """``round_half_away(levels / ratio)`` in exact integer arithmetic."""
    lv = np.asarray(levels, dtype=np.int64)
    num, den = ratio.denominator, ratio.numerator  # levels * num / den
    scaled = lv * num
    mag = np.abs(scaled)
    q, rem = np.divmod(mag, den)
    q = q + (2 * rem >= den)
    return np.sign(scaled) * q


def coarsen(tree: ContourTree, keys: np.ndarray) -> tuple[ContourTree, PoolingMap]:
    """Contract adjacent nodes with equal ``keys`` and rebuild the tree."""
    graph, assign = contract(tree.graph, keys)
    return tree_on_graph(graph), PoolingMap(assign, graph.n_nodes)


def build_hierarchy(
    grid: ElevationGrid,
    precisions: Sequence[float],
    connectivity: int = 4,
    seed: int = 0,
    epsilon: Optional[float] = None,
) -> TreeHierarchy:
    """Trees at every precision in ``precisions`` (finest first) and the maps linking them."""
    exact = _validate_precisions(precisions)
    trees = [contour_tree(grid, float(exact[0]), connectivity, seed, epsilon)]
    maps = []
    for fine, coarse in zip(exact, exact[1:]):
        keys = requantize(trees[-1].level, coarse / fine)
        t, m = coarsen(trees[-1], keys)
        trees.append(t)
        maps.append(m)
    meta = {"connectivity": connectivity, "seed": seed, "epsilon": epsilon}
    return TreeHierarchy(tuple(trees), tuple(maps), tuple(float(r) for r in exact), meta)


def save_hierarchy(path, h: TreeHierarchy) -> Path:
    """JSON manifest with every level's tree manifest, plus a ``.bin`` payload."""
    path = Path(path).with_suffix(".json")
    blocks = []
    levels = []
    for l, t in enumerate(h.trees):
        levels.append({"precision": h.precisions[l], "tree": tree_manifest(t)})
        arrays = tree_arrays(t)
        if l > 0:
            arrays.pop("pixel_elevation")
        blocks += [(f"{l}/{k}", v) for k, v in arrays.items()]
    for l, m in enumerate(h.maps):
        blocks.append((f"map{l}", m.assign.astype("<i8")))
    man = {
        "format": HIERARCHY_FORMAT,
        "version": HIERARCHY_VERSION,
        "precisions": list(h.precisions),
        "node_counts": h.node_counts,
        "meta": h.meta,
        "levels": levels,
        "payload": path.with_suffix(".bin").name,
    }
    man["blocks"] = write_blocks(path.with_suffix(".bin"), blocks)
    path.write_text(json.dumps(man, indent=1) + "\n")
    return path


def load_hierarchy(path) -> TreeHierarchy:
    path = Path(path)
    man = json.loads(path.read_text())
    check_header(man, HIERARCHY_FORMAT, HIERARCHY_VERSION, path)
    blocks = dict(read_blocks(path.parent / man["payload"], man["blocks"]))
    pix = blocks["0/pixel_elevation"]
    trees = []
    for l, lv in enumerate(man["levels"]):
        arrays = {k: blocks[f"{l}/{k}"] for k in ("members", "edges", "region_edges")}
        arrays["pixel_elevation"] = pix
        trees.append(tree_from_parts(lv["tree"], arrays))
    maps = [PoolingMap(blocks[f"map{l}"], trees[l + 1].n_nodes) for l in range(len(trees) - 1)]
    return TreeHierarchy(tuple(trees), tuple(maps), tuple(man["precisions"]), man.get("meta", {}))
