"""Synthetic flood tiles.

Terrain is a sum of Gaussian bumps. Water fills the terrain from the global
minimum up to a quantile of the quantized elevation levels, so the flood
boundary always follows a contour. Features are class-dependent Gaussians; a
fraction of the tile is covered by disc-shaped patches whose features are
drawn from the opposite class, standing in for canopy over water.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .raster import ElevationGrid, FeatureRaster, LabelRaster, load_raster, quantize, save_raster

CLASS_MEANS = np.array([[0.5, 0.5, 0.5], [-0.5, -0.5, -0.5]])  # dry, flood


@dataclass(frozen=True)
class SynthParams:
    size: int = 128
    n_hills: int = 12
    water_level_quantile: float = 0.35
    occlusion_fraction: float = 0.2
    noise_sigma: float = 0.5
    precision: float = 0.05

    def __post_init__(self):
        if self.size < 16:
            raise ValueError(f"size must be at least 16, got {self.size}")
        if self.n_hills < 1:
            raise ValueError("n_hills must be positive")
        if not 0.0 < self.water_level_quantile < 1.0:
            raise ValueError("water_level_quantile must lie in (0, 1)")
        if not 0.0 <= self.occlusion_fraction < 1.0:
            raise ValueError("occlusion_fraction must lie in [0, 1)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.precision <= 0:
            raise ValueError("precision must be positive")


@dataclass(frozen=True)
class SynthTile:
    elevation: ElevationGrid
    features: FeatureRaster
    labels: LabelRaster
    occlusion: np.ndarray  # bool mask of pixels with swapped features
    water_level: int  # quantized level that bounds the fill


def terrain(rng: np.random.Generator, size: int, n_hills: int) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    tilt = rng.uniform(-1.0, 1.0, 2) / size
    e = 1.0 + tilt[0] * yy + tilt[1] * xx
    for _ in range(n_hills):
        cy, cx = rng.uniform(0, size, 2)
        sigma = rng.uniform(size / 16, size / 5)
        amp = rng.uniform(0.5, 3.0) * (1.0 if rng.random() < 0.7 else -1.0)
        e += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    return e


def flood_fill(levels: np.ndarray, water_level: int) -> np.ndarray:
    """Pixels connected (4-neighbourhood) to the lowest pixel through levels <= ``water_level``."""
    wet, _ = ndimage.label(levels <= water_level)
    seed = np.unravel_index(np.argmin(levels), levels.shape)
    return wet == wet[seed]


def occlusion_mask(rng: np.random.Generator, size: int, fraction: float) -> np.ndarray:
    """Union of random discs covering at least ``fraction`` of the tile (empty for 0)."""
    mask = np.zeros((size, size), dtype=bool)
    if fraction <= 0:
        return mask
    yy, xx = np.mgrid[:size, :size]
    target = fraction * size * size
    while mask.sum() < target:
        cy, cx = rng.uniform(0, size, 2)
        r = rng.uniform(size / 32, size / 10)
        mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    return mask


def synth_tile(seed: int, params: SynthParams = SynthParams(), index: int = 0) -> SynthTile:
    """One tile; the random stream is keyed by ``(seed, index)``."""
    rng = np.random.default_rng([seed, index])
    e = terrain(rng, params.size, params.n_hills)
    grid = ElevationGrid(e)
    levels = quantize(grid, params.precision).levels
    water = int(np.quantile(levels, params.water_level_quantile, method="lower"))
    flood = flood_fill(levels, water)
    classes = flood.astype(np.int64)
    occ = occlusion_mask(rng, params.size, params.occlusion_fraction)
    shown = np.where(occ, 1 - classes, classes)
    noise = params.noise_sigma * rng.standard_normal((params.size, params.size, CLASS_MEANS.shape[1]))
    feats = CLASS_MEANS[shown] + noise
    return SynthTile(grid, FeatureRaster(feats), LabelRaster(classes, 2), occ, water)


def synth_dataset(seed: int, n_tiles: int, params: SynthParams = SynthParams()) -> list[SynthTile]:
    return [synth_tile(seed, params, i) for i in range(n_tiles)]


def save_dataset(out_dir, tiles: list[SynthTile], seed: int, params: SynthParams) -> Path:
    """Each tile as raster files in ``tile_XXX/``, plus a ``dataset.json`` index."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, t in enumerate(tiles):
        d = out / f"tile_{i:03d}"
        d.mkdir(exist_ok=True)
        save_raster(d / "elevation.json", t.elevation)
        save_raster(d / "features.json", t.features)
        save_raster(d / "labels.json", t.labels)
        save_raster(d / "occlusion.json", LabelRaster(t.occlusion.astype(np.int64), 2))
        entries.append(
            {
                "name": d.name,
                "elevation": f"{d.name}/elevation.json",
                "features": f"{d.name}/features.json",
                "labels": f"{d.name}/labels.json",
                "occlusion": f"{d.name}/occlusion.json",
                "water_level": t.water_level,
            }
        )
    index = {"seed": seed, "params": params.__dict__, "tiles": entries}
    path = out / "dataset.json"
    path.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(path) -> tuple[dict, list[dict]]:
    """Index and per-tile rasters (``elevation``, ``features``, ``labels``, ``occlusion``)."""
    path = Path(path)
    if path.is_dir():
        path = path / "dataset.json"
    index = json.loads(path.read_text())
    tiles = []
    for e in index["tiles"]:
        tiles.append(
            {
                "name": e["name"],
                "elevation": load_raster(path.parent / e["elevation"], "elevation"),
                "features": load_raster(path.parent / e["features"], "feature"),
                "labels": load_raster(path.parent / e["labels"], "label"),
                "occlusion": load_raster(path.parent / e["occlusion"], "label").classes.astype(bool)
                if "occlusion" in e
                else None,
            }
        )
    return index, tiles
