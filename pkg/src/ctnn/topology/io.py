"""Tree serialization (JSON manifest + binary payload) and DOT export.

The payload is a concatenation of little-endian blocks whose dtype and length
are listed in the manifest, so one reader serves trees and hierarchies alike.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .contour import ContourTree
from .regions import RegionGraph

TREE_FORMAT = "ctnn-tree"
TREE_VERSION = 1


class TreeFormatError(ValueError):
    pass


def tree_manifest(tree: ContourTree) -> dict:
    """JSON-ready description of the nodes; bulk arrays go to the payload."""
    return {
        "rows": int(tree.shape[0]),
        "cols": int(tree.shape[1]),
        "connectivity": int(tree.graph.connectivity),
        "n_nodes": tree.n_nodes,
        "n_edges": int(len(tree.edges)),
        "nodes": [
            {"id": i, "level": int(lv), "elevation": float(el), "members": int(sz)}
            for i, (lv, el, sz) in enumerate(zip(tree.level.tolist(), tree.elevation.tolist(), tree.sizes.tolist()))
        ],
    }


def tree_arrays(tree: ContourTree) -> dict[str, np.ndarray]:
    members = np.concatenate(tree.members()) if tree.n_nodes else np.zeros(0, dtype=np.int64)
    return {
        "members": members.astype("<i8"),
        "edges": tree.edges.reshape(-1).astype("<i8"),
        "region_edges": tree.graph.edges.reshape(-1).astype("<i8"),
        "pixel_elevation": tree.graph.pixel_elevation.astype("<f8"),
    }


def tree_from_parts(manifest: dict, arrays: dict[str, np.ndarray]) -> ContourTree:
    rows, cols = manifest["rows"], manifest["cols"]
    nodes = manifest["nodes"]
    n = len(nodes)
    sizes = np.array([nd["members"] for nd in nodes], dtype=np.int64)
    members = arrays["members"]
    if sizes.sum() != members.size or members.size > rows * cols:
        raise TreeFormatError("member payload does not match member counts")
    p2n = np.full(rows * cols, -1, dtype=np.int64)
    p2n[members] = np.repeat(np.arange(n), sizes)
    graph = RegionGraph(
        (rows, cols),
        p2n,
        np.array([nd["level"] for nd in nodes], dtype=np.int64),
        np.array([nd["elevation"] for nd in nodes], dtype=np.float64),
        arrays["region_edges"].reshape(-1, 2),
        arrays["pixel_elevation"],
        manifest.get("connectivity", 4),
    )
    return ContourTree(graph, arrays["edges"].reshape(-1, 2))


def write_blocks(path: Path, blocks: list[tuple[str, np.ndarray]]) -> list[dict]:
    """Write named arrays back to back; returns the manifest block table."""
    table = []
    with open(path, "wb") as fh:
        for name, arr in blocks:
            dt = np.dtype(arr.dtype).newbyteorder("<")
            fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
            table.append({"name": name, "dtype": dt.str, "length": int(arr.size)})
    return table


def read_blocks(path: Path, table: list[dict]) -> list[tuple[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    expected = sum(np.dtype(b["dtype"]).itemsize * b["length"] for b in table)
    if len(raw) != expected:
        raise TreeFormatError(f"{path}: payload has {len(raw)} bytes, manifest expects {expected}")
    out, pos = [], 0
    for b in table:
        dt = np.dtype(b["dtype"])
        nbytes = dt.itemsize * b["length"]
        arr = np.frombuffer(raw, dtype=dt, count=b["length"], offset=pos)
        out.append((b["name"], arr.astype(dt.newbyteorder("="))))
        pos += nbytes
    return out


def check_header(man: dict, fmt: str, version: int, path) -> None:
    if man.get("format") != fmt:
        raise TreeFormatError(f"{path}: expected format {fmt!r}, found {man.get('format')!r}")
    if man.get("version") != version:
        raise TreeFormatError(f"{path}: unsupported {fmt} version {man.get('version')} (reader is {version})")


def save_tree(path, tree: ContourTree) -> Path:
    """Write ``path`` (.json manifest) and a sibling ``.bin`` payload."""
    path = Path(path).with_suffix(".json")
    man = {"format": TREE_FORMAT, "version": TREE_VERSION, **tree_manifest(tree)}
    man["payload"] = path.with_suffix(".bin").name
    man["blocks"] = write_blocks(path.with_suffix(".bin"), list(tree_arrays(tree).items()))
    path.write_text(json.dumps(man) + "\n")
    return path


def load_tree(path) -> ContourTree:
    path = Path(path)
    man = json.loads(path.read_text())
    check_header(man, TREE_FORMAT, TREE_VERSION, path)
    arrays = dict(read_blocks(path.parent / man["payload"], man["blocks"]))
    return tree_from_parts(man, arrays)


def to_dot(tree: ContourTree, name: str = "contour_tree") -> str:
    """Graphviz digraph; node labels show level and member count."""
    lines = [f"digraph {name} {{", "  node [shape=ellipse];"]
    for i, (lv, sz) in enumerate(zip(tree.level.tolist(), tree.sizes.tolist())):
        lines.append(f'  n{i} [label="{i}\\nlevel {lv}\\n{sz} px"];')
    for u, v in tree.edges.tolist():
        lines.append(f"  n{u} -> n{v};")
    lines.append("}")
    return "\n".join(lines) + "\n"
