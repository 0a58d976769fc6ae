"""Contour-tree construction on elevation grids."""

from .contour import (
    ContourTree,
    TreeInvariantError,
    aggregate_features,
    aggregate_labels,
    augmented_contour_tree,
    collapse_contours,
    contour_tree,
    merge_trees,
    node_adjacency,
    project_to_pixels,
    tree_on_graph,
)
from .mergetree import DuplicateElevationError, MergeTree, build_join_tree, build_split_tree, sweep
from .io import TreeFormatError, load_tree, save_tree, to_dot
from .oracle import brute_force_contour_tree
from .regions import RegionGraph, contract, grid_graph

__all__ = [
    "ContourTree",
    "DuplicateElevationError",
    "MergeTree",
    "RegionGraph",
    "TreeFormatError",
    "TreeInvariantError",
    "aggregate_features",
    "aggregate_labels",
    "augmented_contour_tree",
    "brute_force_contour_tree",
    "build_join_tree",
    "build_split_tree",
    "collapse_contours",
    "contour_tree",
    "contract",
    "grid_graph",
    "load_tree",
    "save_tree",
    "to_dot",
    "merge_trees",
    "node_adjacency",
    "project_to_pixels",
    "sweep",
    "tree_on_graph",
]
