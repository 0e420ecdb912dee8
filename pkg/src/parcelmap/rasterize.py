"""Burn vector layers onto the analysis grid by cell-center membership."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .geometry import RoadPolyline, SimplePolygon, buffer_width
from .raster import Band, Grid

# absorbs rounding when a cell center sits exactly on a buffer edge or ring
_EPS = 1e-9


def _segment_distance(px, py, a, b):
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    L2 = dx * dx + dy * dy
    if L2 == 0:
        return np.hypot(px - ax, py - ay)
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / L2, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def rasterize_roads(roads: Iterable[RoadPolyline], grid: Grid) -> Band:
    """Mark cells whose center lies within half the road width of a centerline."""
    mask = np.zeros(grid.shape, dtype=np.int64)
    xs, ys = grid.col_centers(), grid.row_centers()
    for road in roads:
        half = buffer_width(road.road_class) / 2.0
        for a, b in road.segments():
            c0, c1 = grid.col_range(min(a[0], b[0]) - half, max(a[0], b[0]) + half)
            r0, r1 = grid.row_range(min(a[1], b[1]) - half, max(a[1], b[1]) + half)
            if c0 >= c1 or r0 >= r1:
                continue
            px, py = np.meshgrid(xs[c0:c1], ys[r0:r1])
            hit = _segment_distance(px, py, a, b) <= half + _EPS
            mask[r0:r1, c0:c1] |= hit
    return Band(grid, mask)


def _ring_membership(px, py, ring: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """(even-odd inside, on boundary) for points against one ring."""
    inside = np.zeros(px.shape, dtype=bool)
    on_edge = np.zeros(px.shape, dtype=bool)
    n = len(ring)
    for i in range(n):
        (x1, y1), (x2, y2) = ring[i], ring[(i + 1) % n]
        on_edge |= _segment_distance(px, py, (x1, y1), (x2, y2)) <= _EPS
        if y1 == y2:
            continue
        crosses = (y1 > py) != (y2 > py)
        xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < xint)
    return inside, on_edge


def polygon_mask(poly: SimplePolygon, grid: Grid) -> np.ndarray:
    """Boolean (nrows, ncols) mask of cell centers inside one polygon."""
    out = np.zeros(grid.shape, dtype=bool)
    xmin, ymin, xmax, ymax = poly.bounds
    c0, c1 = grid.col_range(xmin, xmax)
    r0, r1 = grid.row_range(ymin, ymax)
    if c0 >= c1 or r0 >= r1:
        return out
    px, py = np.meshgrid(grid.col_centers()[c0:c1], grid.row_centers()[r0:r1])
    inside = np.zeros(px.shape, dtype=bool)
    boundary = np.zeros(px.shape, dtype=bool)
    for ring in poly.rings:
        ins, edge = _ring_membership(px, py, ring)
        inside ^= ins
        boundary |= edge
    out[r0:r1, c0:c1] = inside | boundary
    return out


def rasterize_polygons(polys: Iterable[SimplePolygon], grid: Grid) -> Band:
    """Mark cells whose center is inside any polygon (even-odd; edges count as inside)."""
    mask = np.zeros(grid.shape, dtype=bool)
    for poly in polys:
        mask |= polygon_mask(poly, grid)
    return Band(grid, mask.astype(np.int64))


def polygon_cells(poly: SimplePolygon, grid: Grid) -> np.ndarray:
    return np.flatnonzero(polygon_mask(poly, grid))
