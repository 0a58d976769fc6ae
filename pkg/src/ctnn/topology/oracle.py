"""Slow reference construction of flat-zone contour trees, for testing.

Nothing here shares code with the fast path beyond the raster helpers: flat
zones come from breadth-first search, merge-tree parents from recomputing
superlevel/sublevel components at every threshold, and the merge from a full
rescan for the smallest-id leaf after each removal.
"""

from __future__ import annotations

from collections import deque
from typing import Optional

import numpy as np

from ..raster import ElevationGrid, neighbors, perturb_unique, quantize
from .contour import ContourTree
from .regions import RegionGraph

MAX_PIXELS = 4096


def flat_zones(levels: np.ndarray, valid: np.ndarray, connectivity: int = 4) -> np.ndarray:
    """Zone id per pixel (-1 for nodata), zones numbered by first pixel in raster order."""
    rows, cols = levels.shape
    zone = -np.ones((rows, cols), dtype=np.int64)
    k = 0
    for r in range(rows):
        for c in range(cols):
            if zone[r, c] >= 0 or not valid[r, c]:
                continue
            zone[r, c] = k
            todo = deque([(r, c)])
            while todo:
                pr, pc = todo.popleft()
                for nr, nc in neighbors(pr, pc, (rows, cols), connectivity):
                    if valid[nr, nc] and zone[nr, nc] < 0 and levels[nr, nc] == levels[pr, pc]:
                        zone[nr, nc] = k
                        todo.append((nr, nc))
            k += 1
    return zone


def zone_adjacency(zone: np.ndarray, connectivity: int = 4) -> list[set]:
    n = int(zone.max()) + 1 if zone.size else 0
    adj: list[set] = [set() for _ in range(n)]
    rows, cols = zone.shape
    for r in range(rows):
        for c in range(cols):
            a = zone[r, c]
            if a < 0:
                continue
            for nr, nc in neighbors(r, c, zone.shape, connectivity):
                b = zone[nr, nc]
                if b >= 0 and b != a:
                    adj[a].add(int(b))
    return adj


def _components(adj: list[set], nodes: set) -> dict:
    label = {}
    for s in sorted(nodes):
        if s in label:
            continue
        label[s] = s
        stack = [s]
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if w in nodes and w not in label:
                    label[w] = s
                    stack.append(w)
    return label


def merge_tree_parents(adj: list[set], key: list, kind: str) -> list[int]:
    """Parent of each node from threshold components.

    For a join tree the parent of ``z`` is the highest node ``w`` below ``z``
    whose superlevel component at ``w`` contains ``z``; split trees mirror this.
    """
    n = len(adj)
    ranked = sorted(range(n), key=lambda i: key[i], reverse=(kind == "join"))
    parent = [-1] * n
    for t, w in enumerate(ranked):
        if t == 0:
            continue
        above = set(ranked[: t + 1])
        comp = _components(adj, above)
        for z in ranked[:t]:
            if parent[z] < 0 and comp[z] == comp[w]:
                parent[z] = w
    return parent


def naive_merge(jp: list[int], sp: list[int]) -> list[tuple[int, int]]:
    jp, sp = list(jp), list(sp)
    n = len(jp)
    alive = [True] * n
    edges = []

    def kids(par, v):
        return [c for c in range(n) if alive[c] and par[c] == v]

    for _ in range(n):
        for v in range(n):
            if not alive[v]:
                continue
            jk, sk = kids(jp, v), kids(sp, v)
            if not jk and len(sk) <= 1:
                leaf_par, other, up = jp, sp, True
                okids = sk
                break
            if not sk and len(jk) <= 1:
                leaf_par, other, up = sp, jp, False
                okids = jk
                break
        else:
            raise RuntimeError("no leaf found")
        u = leaf_par[v]
        if u >= 0:
            edges.append((v, u) if up else (u, v))
        for c in okids:
            other[c] = other[v]
        alive[v] = False
    return edges


def brute_force_contour_tree(
    grid: ElevationGrid,
    precision: Optional[float] = None,
    connectivity: int = 4,
    seed: int = 0,
    epsilon: Optional[float] = None,
    levels: Optional[np.ndarray] = None,
):
    """Reference flat-zone contour tree.

    Either ``precision`` (levels = quantized elevation) or explicit per-pixel
    ``levels`` must be given. The perturbation matches the fast path for the
    same ``seed``/``epsilon`` so node elevations, and hence the sweep order,
    agree.
    """
    if grid.values.size > MAX_PIXELS:
        raise ValueError(f"brute force limited to {MAX_PIXELS} pixels, got {grid.values.size}")
    if levels is None:
        if precision is None:
            raise ValueError("give precision or levels")
        levels = quantize(grid, precision).levels
        eps = precision * 1e-3 if epsilon is None else epsilon
        pert = perturb_unique(grid, seed, eps, precision).values
    else:
        levels = np.asarray(levels)
        pert = grid.values if epsilon is None else perturb_unique(grid, seed, epsilon).values
    valid = grid.valid
    zone = flat_zones(levels, valid, connectivity)
    n = int(zone.max()) + 1 if valid.any() else 0
    sums = [0.0] * n
    counts = [0] * n
    for idx, z in enumerate(zone.ravel().tolist()):
        if z >= 0:
            sums[z] += float(pert.ravel()[idx])
            counts[z] += 1
    elev = [s / c for s, c in zip(sums, counts)]
    adj = zone_adjacency(zone, connectivity)
    key = [(elev[i], i) for i in range(n)]
    jp = merge_tree_parents(adj, key, "join")
    sp = merge_tree_parents(adj, key, "split")
    edges = naive_merge(jp, sp)

    zone_level = np.zeros(n, dtype=np.int64)
    for (r, c), z in np.ndenumerate(zone):
        if z >= 0:
            zone_level[z] = levels[r, c]
    region_edges = sorted((a, b) for a in range(n) for b in adj[a] if a < b)
    graph = RegionGraph(
        grid.shape,
        zone.ravel().copy(),
        zone_level,
        np.array(elev, dtype=np.float64),
        np.array(region_edges, dtype=np.int64).reshape(-1, 2),
        np.asarray(pert, dtype=np.float64).ravel(),
        connectivity,
    )
    return ContourTree(graph, np.array(edges, dtype=np.int64).reshape(-1, 2))
