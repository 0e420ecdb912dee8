"""Socio-economic parcel features from POIs and AOIs.

POIs become one quartic-kernel density surface per category, min-max
normalized over the grid and averaged over each parcel. AOIs become the share
of a parcel's cells whose centers fall in any footprint of a category.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import PlanarPoint, SimplePolygon, polygon_area
from .parcels import Parcel, parcel_spectral_features
from .raster import FEATURE_BANDS, Band, Grid, MultibandRaster, zonal_mean
from .rasterize import polygon_mask
from .scheme import CategoryScheme, Level

DEFAULT_BANDWIDTH = 1000.0


@dataclass(frozen=True)
class PoiPoint:
    id: int
    location: PlanarPoint
    category: int


@dataclass(frozen=True)
class AoiFootprint:
    id: int
    footprint: SimplePolygon
    category: int

    def __post_init__(self):
        polygon_area(self.footprint)  # raises on degenerate footprints


@dataclass(frozen=True)
class FeatureVector:
    schema: tuple[str, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.schema) != len(self.values):
            raise ValueError("schema and values differ in length")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("feature values must be finite")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


class SchemaMismatch(ValueError):
    pass


def feature_categories(scheme: CategoryScheme, level: Level | str = Level.L2) -> list[int]:
    """Built-up class ids at ``level`` in scheme order: the POI/AOI feature axes."""
    bur = scheme.bur.id
    return [c.id for c in scheme.descendants(bur, Level.parse(level))]


def category_of(scheme: CategoryScheme, class_id: int, categories: Sequence[int]) -> int:
    """Map a POI/AOI class onto the configured feature granularity."""
    level = scheme[categories[0]].level
    c = scheme[class_id]
    if c.level < level:
        raise ValueError(f"category {c.code} is coarser than the {level.name} feature granularity")
    target = scheme.ancestor_at(class_id, level).id
    if target not in categories:
        raise ValueError(f"category {c.code} is not a built-up feature category")
    return target


# --- POI density ------------------------------------------------------------

def kernel_density(points: Iterable[PoiPoint], grid: Grid, bandwidth: float = DEFAULT_BANDWIDTH) -> Band:
    """Quartic kernel density, (3 / (pi h^2)) (1 - (d/h)^2)^2 for d < h."""
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    h = float(bandwidth)
    norm = 3.0 / (math.pi * h * h)
    out = np.zeros(grid.shape)
    xs, ys = grid.col_centers(), grid.row_centers()
    for p in sorted(points, key=lambda q: q.id):
        px, py = p.location
        c0, c1 = grid.col_range(px - h, px + h)
        r0, r1 = grid.row_range(py - h, py + h)
        if c0 >= c1 or r0 >= r1:
            continue
        dx = xs[c0:c1] - px
        dy = ys[r0:r1] - py
        u = (dy[:, None] ** 2 + dx[None, :] ** 2) / (h * h)
        k = np.where(u < 1.0, norm * (1.0 - u) ** 2, 0.0)
        out[r0:r1, c0:c1] += k
    return Band(grid, out)


def normalize_density(band: Band) -> Band:
    """Min-max scale to [0, 1]; a constant band maps to all zeros."""
    vals = band.values.astype(np.float64)
    valid = vals != band.grid.nodata
    out = np.where(valid, 0.0, band.grid.nodata)
    if valid.any():
        lo, hi = vals[valid].min(), vals[valid].max()
        if hi > lo:
            out[valid] = (vals[valid] - lo) / (hi - lo)
    return Band(band.grid, out)


def density_maps(pois: Sequence[PoiPoint], grid: Grid, categories: Sequence[int],
                 scheme: CategoryScheme, bandwidth: float = DEFAULT_BANDWIDTH,
                 workers: int = 1) -> dict[int, Band]:
    """Normalized density band per feature category."""
    grouped: dict[int, list[PoiPoint]] = {c: [] for c in categories}
    for p in pois:
        grouped[category_of(scheme, p.category, categories)].append(p)

    def one(cat):
        return normalize_density(kernel_density(grouped[cat], grid, bandwidth))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        bands = list(ex.map(one, categories))
    return dict(zip(categories, bands))


def poi_density_feature(parcel: Parcel, density: Band) -> float:
    return zonal_mean(density, parcel.cells)


# --- AOI proportions --------------------------------------------------------

def aoi_masks(aois: Sequence[AoiFootprint], grid: Grid, categories: Sequence[int],
              scheme: CategoryScheme) -> dict[int, np.ndarray]:
    """Flat boolean coverage mask per category (union of its footprints)."""
    masks = {c: np.zeros(grid.size, dtype=bool) for c in categories}
    for a in sorted(aois, key=lambda q: q.id):
        cat = category_of(scheme, a.category, categories)
        masks[cat] |= polygon_mask(a.footprint, grid).reshape(-1)
    return masks


def aoi_proportions_from_masks(masks: Mapping[int, np.ndarray], parcel: Parcel) -> dict[int, float]:
    n = parcel.n_cells
    return {c: int(np.count_nonzero(m[parcel.cells])) / n for c, m in masks.items()}


def aoi_proportions(aois: Sequence[AoiFootprint], parcel: Parcel, grid: Grid,
                    categories: Sequence[int], scheme: CategoryScheme) -> dict[int, float]:
    """Share of the parcel's cells covered by each category's footprints."""
    return aoi_proportions_from_masks(aoi_masks(aois, grid, categories, scheme), parcel)


# --- assembly ---------------------------------------------------------------

def feature_schema(scheme: CategoryScheme, categories: Sequence[int], include_aoi: bool = True) -> tuple[str, ...]:
    names = list(FEATURE_BANDS)
    names += [f"POI_{scheme[c].code}" for c in categories]
    if include_aoi:
        names += [f"AOI_{scheme[c].code}" for c in categories]
    return tuple(names)


def feature_group(name: str) -> str:
    """'POI', 'AOI' or 'spectral' for a schema column name."""
    for prefix in ("POI", "AOI"):
        if name.startswith(prefix + "_"):
            return prefix
    return "spectral"


def assemble_parcel_features(spectral: Sequence[float], poi: Mapping[int, float],
                             aoi: Mapping[int, float] | None, categories: Sequence[int],
                             scheme: CategoryScheme, include_aoi: bool = True) -> FeatureVector:
    if len(spectral) != len(FEATURE_BANDS):
        raise SchemaMismatch(f"expected {len(FEATURE_BANDS)} spectral values, got {len(spectral)}")
    if set(poi) != set(categories):
        raise SchemaMismatch("POI features do not match the category configuration")
    values = list(spectral) + [poi[c] for c in categories]
    if include_aoi:
        if aoi is None or set(aoi) != set(categories):
            raise SchemaMismatch("AOI features do not match the category configuration")
        values += [aoi[c] for c in categories]
    return FeatureVector(feature_schema(scheme, categories, include_aoi), tuple(float(v) for v in values))


@dataclass
class ParcelFeatureTable:
    schema: tuple[str, ...]
    parcel_ids: list[int]
    matrix: np.ndarray  # (n_parcels, n_features)

    def row(self, parcel_id: int) -> FeatureVector:
        i = self.parcel_ids.index(parcel_id)
        return FeatureVector(self.schema, tuple(self.matrix[i].tolist()))

    def subset(self, parcel_ids: Sequence[int]) -> np.ndarray:
        pos = {pid: i for i, pid in enumerate(self.parcel_ids)}
        return self.matrix[[pos[p] for p in parcel_ids]]

    def drop(self, prefix: str) -> "ParcelFeatureTable":
        keep = [i for i, n in enumerate(self.schema) if not n.startswith(prefix)]
        return ParcelFeatureTable(tuple(self.schema[i] for i in keep), list(self.parcel_ids),
                                  self.matrix[:, keep])


def parcel_feature_table(parcels: Sequence[Parcel], raster: MultibandRaster, pois: Sequence[PoiPoint],
                         aois: Sequence[AoiFootprint], scheme: CategoryScheme, *,
                         level: Level | str = Level.L2, bandwidth: float = DEFAULT_BANDWIDTH,
                         include_aoi: bool = True, workers: int = 1) -> ParcelFeatureTable:
    """Spectral + POI (+ AOI) features for every parcel, rows in parcel id order."""
    categories = feature_categories(scheme, level)
    dens = density_maps(pois, raster.grid, categories, scheme, bandwidth, workers)
    masks = aoi_masks(aois, raster.grid, categories, scheme) if include_aoi else None

    def one(parcel):
        spectral = parcel_spectral_features(parcel, raster)
        poi = {c: poi_density_feature(parcel, dens[c]) for c in categories}
        aoi = aoi_proportions_from_masks(masks, parcel) if masks is not None else None
        return assemble_parcel_features(spectral, poi, aoi, categories, scheme, include_aoi)

    ordered = sorted(parcels, key=lambda p: p.id)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        vectors = list(ex.map(one, ordered))
    schema = feature_schema(scheme, categories, include_aoi)
    if any(v.schema != schema for v in vectors):
        raise SchemaMismatch("inconsistent feature schema across parcels")
    matrix = np.array([v.values for v in vectors], dtype=np.float64).reshape(len(vectors), len(schema))
    return ParcelFeatureTable(schema, [p.id for p in ordered], matrix)
