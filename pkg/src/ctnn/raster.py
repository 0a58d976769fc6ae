"""Elevation, feature and label rasters plus the on-disk raster format.

A raster on disk is a JSON header (``name.json``) next to a raw little-endian
row-major payload (``name.bin``). Multi-band rasters are pixel-interleaved,
i.e. the payload is a C-ordered ``(rows, cols, bands)`` array.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np

PathLike = Union[str, Path]
RasterKind = Literal["elevation", "feature", "label"]

_DTYPES = {"f64": np.dtype("<f8"), "u8": np.dtype("u1")}


class RasterError(ValueError):
    """Base class for raster problems. ``code`` is a stable short identifier."""

    code = "raster"


class RasterFormatError(RasterError):
    code = "malformed-header"


class DimensionMismatchError(RasterError):
    code = "dimension-mismatch"


class NonFiniteValueError(RasterError):
    code = "non-finite"


class ClassRangeError(RasterError):
    code = "class-range"


@dataclass(frozen=True)
class ElevationGrid:
    """Elevation surface in meters, stored as a ``(rows, cols)`` float64 array."""

    values: np.ndarray
    nodata_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DimensionMismatchError(f"elevation must be 2-D, got shape {v.shape}")
        mask = None
        if self.nodata_mask is not None:
            mask = np.asarray(self.nodata_mask, dtype=bool)
            if mask.shape != v.shape:
                raise DimensionMismatchError("nodata mask shape differs from values")
            if not mask.any():
                mask = None
        valid = v if mask is None else v[~mask]
        if not np.all(np.isfinite(valid)):
            raise NonFiniteValueError("elevation contains non-finite values outside the nodata mask")
        v.setflags(write=False)
        if mask is not None:
            mask.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "nodata_mask", mask)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def valid(self) -> np.ndarray:
        """Boolean ``(rows, cols)`` array, True where the pixel holds data."""
        if self.nodata_mask is None:
            return np.ones(self.shape, dtype=bool)
        return ~self.nodata_mask


@dataclass(frozen=True)
class FeatureRaster:
    """Per-pixel explanatory features, ``(rows, cols, bands)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3:
            raise DimensionMismatchError(f"features must be (rows, cols, bands), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NonFiniteValueError("features contain non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]


@dataclass(frozen=True)
class LabelRaster:
    """Per-pixel class ids in ``0..n_classes-1``; masked pixels are ignored."""

    classes: np.ndarray
    n_classes: int = 2
    nodata_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        c = np.array(self.classes)
        if c.ndim != 2:
            raise DimensionMismatchError(f"labels must be 2-D, got shape {c.shape}")
        if self.n_classes < 2:
            raise ClassRangeError("a label raster needs at least two classes")
        mask = None
        if self.nodata_mask is not None:
            mask = np.asarray(self.nodata_mask, dtype=bool)
            if mask.shape != c.shape:
                raise DimensionMismatchError("nodata mask shape differs from labels")
            if not mask.any():
                mask = None
        c = c.astype(np.int64)
        if mask is not None:
            c = np.where(mask, 0, c)
        if c.size and (c.min() < 0 or c.max() >= self.n_classes):
            raise ClassRangeError(
                f"class ids must lie in [0, {self.n_classes - 1}], found range [{c.min()}, {c.max()}]"
            )
        c.setflags(write=False)
        object.__setattr__(self, "classes", c)
        object.__setattr__(self, "nodata_mask", mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.classes.shape

    @property
    def valid(self) -> np.ndarray:
        if self.nodata_mask is None:
            return np.ones(self.shape, dtype=bool)
        return ~self.nodata_mask


@dataclass(frozen=True)
class QuantizedGrid:
    """Integer elevation levels at a given precision (meters per level)."""

    levels: np.ndarray
    precision: float
    nodata_mask: Optional[np.ndarray] = field(default=None)

    @property
    def shape(self) -> tuple[int, int]:
        return self.levels.shape


def round_half_away(x) -> np.ndarray:
    """Round to the nearest integer, ties away from zero, as int64."""
    x = np.asarray(x, dtype=np.float64)
    whole = np.trunc(x)
    frac = x - whole
    return (whole + np.where(np.abs(frac) >= 0.5, np.sign(x), 0.0)).astype(np.int64)


def quantize(grid: ElevationGrid, precision: float) -> QuantizedGrid:
    """Levels ``round(elevation / precision)`` with round-half-away-from-zero."""
    if not precision > 0:
        raise ValueError(f"precision must be positive, got {precision}")
    vals = grid.values
    if grid.nodata_mask is not None:
        vals = np.where(grid.nodata_mask, 0.0, vals)
    levels = round_half_away(vals / precision)
    levels.setflags(write=False)
    return QuantizedGrid(levels, float(precision), grid.nodata_mask)


def dequantize(q: QuantizedGrid) -> ElevationGrid:
    return ElevationGrid(q.levels * q.precision, q.nodata_mask)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def pixel_noise(seed: int, rows: int, cols: int) -> np.ndarray:
    """Index-keyed noise in the open interval (-1, 1).

    Each value depends only on ``(seed, row, col)``, so any crop or tiling of a
    grid sees the same noise at the same pixel.
    """
    r = np.arange(rows, dtype=np.uint64)[:, None]
    c = np.arange(cols, dtype=np.uint64)[None, :]
    with np.errstate(over="ignore"):
        key = _splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _splitmix64(r * np.uint64(0x100000001B3) + c))
        key = _splitmix64(key)
    unit = ((key >> np.uint64(11)).astype(np.float64) + 0.5) / float(1 << 53)
    return 2.0 * unit - 1.0


def perturb_unique(
    grid: ElevationGrid, seed: int = 0, epsilon: float = 1e-6, precision: Optional[float] = None
) -> ElevationGrid:
    """Add tiny deterministic noise so every valid pixel elevation is distinct.

    If ``precision`` (the finest quantization step) is given, the perturbation is
    guaranteed not to change any pixel's level at that precision and
    ``epsilon`` must be below ``precision / 4``.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if precision is not None and not epsilon < precision / 4:
        raise ValueError(f"epsilon={epsilon} too large for precision {precision}; need epsilon < precision/4")
    base = grid.values
    if grid.nodata_mask is not None:
        base = np.where(grid.nodata_mask, 0.0, base)
    noise = epsilon * pixel_noise(seed, *grid.shape)
    out = base + noise
    if precision is not None:
        before = round_half_away(base / precision)
        flipped = round_half_away(out / precision) != before
        # the level cell is wider than 4*epsilon, so moving the other way stays inside it
        out = np.where(flipped, base - noise, out)
    out = _break_ties(out, grid.valid, base, epsilon)
    if grid.nodata_mask is not None:
        out = np.where(grid.nodata_mask, np.nan, out)
    return ElevationGrid(out, grid.nodata_mask)


def _break_ties(out: np.ndarray, valid: np.ndarray, base: np.ndarray, epsilon: float) -> np.ndarray:
    flat = out.ravel().copy()
    idx = np.flatnonzero(valid.ravel())
    order = idx[np.argsort(flat[idx], kind="stable")]
    v = flat[order]
    dup = np.flatnonzero(v[1:] == v[:-1])
    if dup.size == 0:
        return out
    # nudge later duplicates upward by whole ulps until the sorted run is strictly increasing
    for k in range(1, v.size):
        if v[k] <= v[k - 1]:
            v[k] = np.nextafter(v[k - 1], np.inf)
    flat[order] = v
    if np.any(np.abs(flat[idx] - base.ravel()[idx]) >= epsilon):
        raise ValueError("could not make elevations unique within epsilon; increase epsilon")
    return flat.reshape(out.shape)


def has_unique_values(grid: ElevationGrid) -> bool:
    v = grid.values[grid.valid]
    return np.unique(v).size == v.size


# --------------------------------------------------------------------------- IO


def _payload_path(header: Path, meta: dict) -> Path:
    name = meta.get("payload")
    return header.parent / name if name else header.with_suffix(".bin")


def _read_header(path: Path) -> dict:
    try:
        meta = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RasterFormatError(f"cannot read raster header {path}: {exc}") from exc
    if not isinstance(meta, dict):
        raise RasterFormatError(f"{path}: header must be a JSON object")
    for key in ("rows", "cols", "dtype"):
        if key not in meta:
            raise RasterFormatError(f"{path}: header missing '{key}'")
    if meta["dtype"] not in _DTYPES:
        raise RasterFormatError(f"{path}: unsupported dtype {meta['dtype']!r}")
    for key in ("rows", "cols", "bands"):
        val = meta.get(key, 1)
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            raise RasterFormatError(f"{path}: '{key}' must be a positive integer")
    return meta


def load_raster(path: PathLike, kind: RasterKind):
    """Load a raster written by :func:`save_raster` (or any conforming producer)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"raster header not found: {path}")
    meta = _read_header(path)
    rows, cols, bands = meta["rows"], meta["cols"], meta.get("bands", 1)
    payload = _payload_path(path, meta)
    if not payload.exists():
        raise FileNotFoundError(f"raster payload not found: {payload}")
    dtype = _DTYPES[meta["dtype"]]
    raw = payload.read_bytes()
    if len(raw) % dtype.itemsize:
        raise DimensionMismatchError(f"{payload}: payload size is not a multiple of {dtype.itemsize}")
    data = np.frombuffer(raw, dtype=dtype)
    if data.size != rows * cols * bands:
        raise DimensionMismatchError(
            f"{payload}: header declares {rows}x{cols}x{bands}={rows * cols * bands} values, payload holds {data.size}"
        )
    data = data.reshape(rows, cols, bands)
    nodata = meta.get("nodata")

    if kind == "elevation":
        if bands != 1:
            raise DimensionMismatchError("elevation rasters must have one band")
        vals = data[:, :, 0].astype(np.float64)
        mask = None
        if nodata is not None:
            mask = vals == nodata
        bad = ~np.isfinite(vals) if mask is None else (~np.isfinite(vals) & ~mask)
        if bad.any():
            raise NonFiniteValueError(f"{path}: {int(bad.sum())} non-finite elevation values")
        return ElevationGrid(vals, mask)
    if kind == "feature":
        return FeatureRaster(data.astype(np.float64))
    if kind == "label":
        if bands != 1:
            raise DimensionMismatchError("label rasters must have one band")
        cls = data[:, :, 0].astype(np.int64)
        mask = None if nodata is None else cls == nodata
        n_classes = meta.get("classes", 2)
        if not isinstance(n_classes, int) or n_classes < 2:
            raise RasterFormatError(f"{path}: 'classes' must be an integer >= 2")
        return LabelRaster(cls, n_classes, mask)
    raise ValueError(f"unknown raster kind {kind!r}")


def save_raster(path: PathLike, raster) -> Path:
    """Write ``raster`` as ``path`` (JSON header) plus a sibling ``.bin`` payload."""
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    meta: dict = {}
    if isinstance(raster, ElevationGrid):
        data = np.array(raster.values, dtype="<f8")
        meta.update(kind="elevation", dtype="f64", bands=1)
        if raster.nodata_mask is not None:
            data[raster.nodata_mask] = -9999.0
            meta["nodata"] = -9999.0
        data = data[:, :, None]
    elif isinstance(raster, FeatureRaster):
        data = np.asarray(raster.values, dtype="<f8")
        meta.update(kind="feature", dtype="f64", bands=raster.bands)
    elif isinstance(raster, LabelRaster):
        if raster.n_classes > 255:
            raise ClassRangeError("u8 label rasters hold at most 255 classes")
        data = np.asarray(raster.classes, dtype="u1").copy()
        meta.update(kind="label", dtype="u8", bands=1, classes=int(raster.n_classes))
        if raster.nodata_mask is not None:
            data[raster.nodata_mask] = 255
            meta["nodata"] = 255
        data = data[:, :, None]
    else:
        raise TypeError(f"cannot save {type(raster).__name__}")
    rows, cols = data.shape[:2]
    header = {"rows": int(rows), "cols": int(cols), **meta, "payload": path.with_suffix(".bin").name}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    path.with_suffix(".bin").write_bytes(np.ascontiguousarray(data).tobytes())
    return path


def load_ascii_grid(path: PathLike) -> ElevationGrid:
    """Import an ESRI ASCII grid (``.asc``) as an elevation raster."""
    path = Path(path)
    lines = path.read_text().split("\n")
    header: dict = {}
    body_start = 0
    for i, line in enumerate(lines):
        parts = line.split()
        if len(parts) == 2 and parts[0][0].isalpha():
            header[parts[0].lower()] = parts[1]
            body_start = i + 1
        elif parts:
            break
    try:
        ncols, nrows = int(header["ncols"]), int(header["nrows"])
    except (KeyError, ValueError) as exc:
        raise RasterFormatError(f"{path}: missing or bad ncols/nrows") from exc
    try:
        vals = np.array(" ".join(lines[body_start:]).split(), dtype=np.float64)
    except ValueError as exc:
        raise RasterFormatError(f"{path}: non-numeric cell value") from exc
    if vals.size != nrows * ncols:
        raise DimensionMismatchError(f"{path}: expected {nrows * ncols} cells, found {vals.size}")
    vals = vals.reshape(nrows, ncols)
    mask = None
    if "nodata_value" in header:
        mask = vals == float(header["nodata_value"])
    return ElevationGrid(vals, mask)


# ------------------------------------------------------------------- adjacency


OFFSETS = {
    4: ((0, 1), (1, 0)),
    8: ((0, 1), (1, 0), (1, 1), (1, -1)),
}


def pixel_pairs(shape: tuple[int, int], connectivity: int = 4) -> np.ndarray:
    """All unordered neighbor pairs ``(a, b)`` of flat pixel indices, ``a < b``."""
    if connectivity not in OFFSETS:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    rows, cols = shape
    idx = np.arange(rows * cols).reshape(rows, cols)
    out = []
    for dr, dc in OFFSETS[connectivity]:
        r0, r1 = 0, rows - dr
        c0, c1 = max(0, -dc), cols - max(0, dc)
        a = idx[r0:r1, c0:c1]
        b = idx[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        if a.size:
            out.append(np.stack([a.ravel(), b.ravel()], axis=1))
    if not out:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = np.concatenate(out).astype(np.int64)
    return np.sort(pairs, axis=1)


def neighbors(r: int, c: int, shape: tuple[int, int], connectivity: int = 4):
    """Yield in-bounds neighbor coordinates of pixel ``(r, c)``."""
    rows, cols = shape
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        steps += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    elif connectivity != 4:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    for dr, dc in steps:
        rr, cc = r + dr, c + dc
        if 0 <= rr < rows and 0 <= cc < cols:
            yield rr, cc
