"""Per-pixel logistic-regression baseline: features only, no spatial context."""

from __future__ import annotations

import numpy as np
from sklearn.linear_model import LogisticRegression

from .raster import FeatureRaster, LabelRaster


def _stack(features: list[FeatureRaster], labels: list[LabelRaster]):
    xs, ys = [], []
    for f, l in zip(features, labels):
        if f.shape != l.shape:
            raise ValueError(f"feature raster {f.shape} and label raster {l.shape} differ")
        keep = l.valid.ravel()
        xs.append(f.values.reshape(-1, f.bands)[keep])
        ys.append(l.classes.ravel()[keep])
    return np.concatenate(xs), np.concatenate(ys)


def fit_baseline(features: list[FeatureRaster], labels: list[LabelRaster], seed: int = 0) -> LogisticRegression:
    x, y = _stack(features, labels)
    clf = LogisticRegression(max_iter=1000, random_state=seed)
    clf.fit(x, y)
    return clf


def predict_baseline(clf: LogisticRegression, features: FeatureRaster, n_classes: int = 2) -> LabelRaster:
    pred = clf.predict(features.values.reshape(-1, features.bands)).astype(np.int64)
    return LabelRaster(pred.reshape(features.shape), n_classes)
