"""Glue between rasters, hierarchies and the model, shared by the CLI and the demos."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .baseline import fit_baseline, predict_baseline
from .hierarchy import TreeHierarchy, build_hierarchy
from .metrics import evaluate
from .model import CtnnModel, ModelConfig, Sample, build_model, predict, prepare, train
from .raster import DimensionMismatchError, ElevationGrid, FeatureRaster, LabelRaster
from .synth import SynthParams, synth_dataset
from .topology import aggregate_features, aggregate_labels, project_to_pixels

# CTNN settings for 128x128 synthetic tiles: the published architecture cut to three levels
SYNTH_CONFIG = ModelConfig(
    L=2,
    hops=(4, 4, 2),
    channels=(16, 32, 64),
    precisions=(0.05, 0.2, 1.0),
    epochs=40,
    lr=1e-2,
    loss_weighting="pixel_count",
)


def tile_hierarchy(elevation: ElevationGrid, config: ModelConfig, seed: int = 0) -> TreeHierarchy:
    return build_hierarchy(elevation, config.precisions, config.connectivity, seed)


def node_features(hierarchy: TreeHierarchy, features: FeatureRaster) -> np.ndarray:
    if features.shape != hierarchy.trees[0].shape:
        raise DimensionMismatchError(f"features {features.shape} do not match elevation {hierarchy.trees[0].shape}")
    return aggregate_features(hierarchy.trees[0], features)


def tile_sample(elevation, features, labels: LabelRaster, config: ModelConfig) -> tuple[TreeHierarchy, Sample]:
    h = tile_hierarchy(elevation, config)
    tree = h.trees[0]
    y, counts = aggregate_labels(tree, labels)
    return h, Sample(prepare(h, config), node_features(h, features), y, tree.sizes)


def predict_tile(model: CtnnModel, elevation: ElevationGrid, features: FeatureRaster,
                 hierarchy: Optional[TreeHierarchy] = None) -> LabelRaster:
    if features.bands != model.f_in:
        raise DimensionMismatchError(f"model expects {model.f_in} feature bands, raster has {features.bands}")
    h = hierarchy if hierarchy is not None else tile_hierarchy(elevation, model.config)
    classes = predict(model, h, node_features(h, features))
    return project_to_pixels(h.trees[0], classes, model.n_classes)


@dataclass
class SuiteResult:
    seed: int
    ctnn_accuracy: float
    baseline_accuracy: float
    history: list
    model: CtnnModel

    @property
    def margin(self) -> float:
        return self.ctnn_accuracy - self.baseline_accuracy


def pixel_accuracy(preds: list[LabelRaster], truths: list[LabelRaster]) -> float:
    cm = sum(evaluate(p, t).confusion for p, t in zip(preds, truths))
    return float(np.trace(cm) / cm.sum())


def synthetic_suite(
    seed: int,
    config: ModelConfig = SYNTH_CONFIG,
    params: SynthParams = SynthParams(),
    n_train: int = 16,
    n_test: int = 4,
    tiles=None,
) -> SuiteResult:
    """Train CTNN and the per-pixel baseline on ``n_train`` tiles, score both on ``n_test`` held-out tiles."""
    tiles = tiles if tiles is not None else synth_dataset(seed, n_train + n_test, params)
    config = replace(config, seed=seed)
    built = [tile_sample(t.elevation, t.features, t.labels, config) for t in tiles]
    model = build_model(config, tiles[0].features.bands, 2)
    _, history = train(model, [s for _, s in built[:n_train]], config)
    test = list(zip(built[n_train:], tiles[n_train:]))
    truths = [t.labels for _, t in test]
    ctnn = [project_to_pixels(h.trees[0], predict(model, s.pyramid, s.x0)) for (h, s), _ in test]
    clf = fit_baseline([t.features for t in tiles[:n_train]], [t.labels for t in tiles[:n_train]], seed)
    base = [predict_baseline(clf, t.features) for _, t in test]
    return SuiteResult(seed, pixel_accuracy(ctnn, truths), pixel_accuracy(base, truths), history, model)
