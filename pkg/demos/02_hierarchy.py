"""Multi-precision hierarchy of a synthetic tile, and what pooling does to a feature map.

    python demos/02_hierarchy.py [--size 128]
"""

import argparse
import time

import numpy as np

from ctnn.hierarchy import build_hierarchy, pool, unpool
from ctnn.synth import SynthParams, synth_tile
from ctnn.topology import aggregate_features


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    tile = synth_tile(args.seed, SynthParams(size=args.size))
    t0 = time.perf_counter()
    h = build_hierarchy(tile.elevation, [0.01, 0.1, 1.0, 10.0])
    print(f"{args.size}x{args.size} tile, hierarchy built in {time.perf_counter() - t0:.2f}s")
    for r, n in zip(h.precisions, h.node_counts):
        print(f"  precision {r:>5g} m: {n:6d} nodes")

    x = aggregate_features(h.trees[0], tile.features)
    coarse = x
    for m in h.maps:
        coarse = pool(coarse, m)
    back = coarse
    for m in reversed(h.maps):
        back = unpool(back, m)
    print("level-0 feature mean        ", np.round(x.mean(axis=0), 4))
    print("after pooling to the top    ", np.round(coarse.mean(axis=0), 4), f"({coarse.shape[0]} rows)")
    print("broadcast back to level 0   ", back.shape)
    print("pool(unpool(top)) == top:", np.array_equal(pool(unpool(coarse, h.maps[-1]), h.maps[-1]), coarse))


if __name__ == "__main__":
    main()
