"""Parcel generation: admin area minus widened roads and water, split into components."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyParcelSet, StageError
from .geometry import RoadPolyline, SimplePolygon
from .raster import (FEATURE_BANDS, Band, Grid, MultibandRaster, component_cells,
                     connected_components, trace_cells, zonal_mean)
from .rasterize import rasterize_polygons, rasterize_roads


@dataclass
class Parcel:
    id: int
    cells: np.ndarray
    outline: SimplePolygon
    area: float
    level0: int | None = None
    level1: int | None = None
    level2: int | None = None
    features: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.cells) == 0:
            raise ValueError(f"parcel {self.id} has no cells")
        if not self.area > 0:
            raise ValueError(f"parcel {self.id} has non-positive area")

    @property
    def n_cells(self) -> int:
        return int(len(self.cells))


@dataclass
class ParcelLayout:
    """Parcels plus the intermediate masks they were carved from."""

    parcels: list[Parcel]
    admin_mask: Band
    road_mask: Band
    water_mask: Band
    parcel_mask: Band
    labels: Band

    def parcel_ids(self) -> list[int]:
        return [p.id for p in self.parcels]


def parcel_mask(admin: SimplePolygon | Sequence[SimplePolygon], roads: Sequence[RoadPolyline],
                water: Sequence[SimplePolygon], grid: Grid) -> tuple[Band, Band, Band, Band]:
    admins = [admin] if isinstance(admin, SimplePolygon) else list(admin)
    admin_m = rasterize_polygons(admins, grid)
    road_m = rasterize_roads(roads, grid)
    water_m = rasterize_polygons(water, grid)
    land = (admin_m.values == 1) & (road_m.values == 0) & (water_m.values == 0)
    return admin_m, road_m, water_m, Band(grid, land.astype(np.int64))


def generate_parcels(admin: SimplePolygon | Sequence[SimplePolygon], roads: Sequence[RoadPolyline],
                     water: Sequence[SimplePolygon], grid: Grid, min_cells: int = 1) -> ParcelLayout:
    """Carve parcels out of the admin area.

    ``roads`` should already be topology-repaired. Parcels are the 4-connected
    components of admin AND NOT road AND NOT water with at least ``min_cells``
    cells, numbered from 1 in raster-scan discovery order.
    """
    admin_m, road_m, water_m, land = parcel_mask(admin, roads, water, grid)
    if not land.values.any():
        raise EmptyParcelSet()
    labels, n = connected_components(land)
    parcels = []
    keep = np.zeros(n + 1, dtype=np.int64)
    for cells in component_cells(labels, n):
        if len(cells) < min_cells:
            continue
        pid = len(parcels) + 1
        keep[labels.flat[cells[0]]] = pid
        parcels.append(Parcel(pid, cells, trace_cells(grid, cells), len(cells) * grid.cell_area))
    if not parcels:
        raise EmptyParcelSet(f"no component reaches min_cells={min_cells}")
    relabeled = Band(grid, keep[labels.values])
    return ParcelLayout(parcels, admin_m, road_m, water_m, land, relabeled)


def parcel_spectral_features(parcel: Parcel, raster: MultibandRaster) -> list[float]:
    """Zonal means in the order RED, GREEN, BLUE, NIR, SWIR1, NDVI, NDWI."""
    out = []
    for name in FEATURE_BANDS:
        band = raster[name]
        v = zonal_mean(band, parcel.cells)
        if v == band.grid.nodata:
            raise StageError("features", f"band {name} is all nodata over the parcel", f"parcel {parcel.id}")
        out.append(v)
    return out
