"""Build the contour tree of a small hand-made surface and compare it with the brute-force oracle.

    python demos/01_contour_tree.py [--dot tree.dot]
"""

import argparse

import numpy as np

from ctnn.raster import ElevationGrid
from ctnn.topology import brute_force_contour_tree, contour_tree, node_adjacency, to_dot


def surface() -> ElevationGrid:
    # background at 3 with two pits and four plateaus of different heights
    g = np.full((7, 29), 3.0)
    for c in (1, 5):
        g[2:5, c : c + 3] = 2.0
        g[3, c + 1] = 1.0
    for c in (9, 15):
        g[1:6, c : c + 5] = 4.0
        g[2:5, c + 1 : c + 4] = 5.0
        g[3, c + 2] = 6.0
    g[2:5, 21:24] = 4.0
    g[3, 22] = 5.0
    g[2:5, 25:28] = 4.0
    return ElevationGrid(g)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dot", help="write the tree as Graphviz DOT")
    args = ap.parse_args()

    grid = surface()
    tree = contour_tree(grid, precision=1.0)
    oracle = brute_force_contour_tree(grid, 1.0)
    print(f"{tree.n_nodes} contour nodes, {len(tree.edges)} edges")
    print("matches brute force:", tree.partition() == oracle.partition() and tree.edge_set() == oracle.edge_set())

    _, a = node_adjacency(tree)
    degree = np.asarray(a.sum(axis=1)).ravel()
    for v in np.argsort(-tree.level, kind="stable"):
        print(f"  node {v:2d}  level {tree.level[v]}  pixels {tree.sizes[v]:3d}  degree {int(degree[v])}")
    if args.dot:
        open(args.dot, "w").write(to_dot(tree))
        print("wrote", args.dot)


if __name__ == "__main__":
    main()
