"""Grid engine: bands, spectral indices, zonal statistics, component labeling.

Cells are addressed by a flat index ``row * ncols + col`` with row 0 at the top
of the grid, matching the row-major order of ESRI ASCII grids. All values are
float64; reductions use ``math.fsum`` so results do not depend on how the cell
set was assembled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy import ndimage

from .errors import InputError
from .geometry import PlanarPoint, SimplePolygon

MAX_CELLS = 10**8
DEFAULT_NODATA = -9999.0

SPECTRAL_BANDS = ("RED", "GREEN", "BLUE", "NIR", "SWIR1")
INDEX_BANDS = ("NDVI", "NDWI")
FEATURE_BANDS = SPECTRAL_BANDS + INDEX_BANDS


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    ncols: int
    nrows: int
    origin_x: float  # lower-left corner
    origin_y: float
    cellsize: float
    nodata: float = DEFAULT_NODATA

    def __post_init__(self):
        if self.ncols <= 0 or self.nrows <= 0:
            raise ValueError("grid dimensions must be positive")
        if not self.cellsize > 0:
            raise ValueError("cellsize must be positive")
        if self.ncols * self.nrows > MAX_CELLS:
            raise ValueError(f"grid exceeds {MAX_CELLS} cells")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    @property
    def size(self) -> int:
        return self.nrows * self.ncols

    @property
    def cell_area(self) -> float:
        return self.cellsize * self.cellsize

    @property
    def extent(self) -> tuple[float, float, float, float]:
        return (self.origin_x, self.origin_y,
                self.origin_x + self.ncols * self.cellsize,
                self.origin_y + self.nrows * self.cellsize)

    def col_centers(self) -> np.ndarray:
        return self.origin_x + (np.arange(self.ncols) + 0.5) * self.cellsize

    def row_centers(self) -> np.ndarray:
        """Y coordinate of each row's centers, top row first."""
        return self.origin_y + (self.nrows - np.arange(self.nrows) - 0.5) * self.cellsize

    def cell_center(self, index: int) -> PlanarPoint:
        r, c = divmod(int(index), self.ncols)
        return PlanarPoint(self.origin_x + (c + 0.5) * self.cellsize,
                           self.origin_y + (self.nrows - r - 0.5) * self.cellsize)

    def centers(self, cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        r, c = np.divmod(np.asarray(cells, dtype=np.int64), self.ncols)
        return (self.origin_x + (c + 0.5) * self.cellsize,
                self.origin_y + (self.nrows - r - 0.5) * self.cellsize)

    def locate(self, x: float, y: float) -> int | None:
        """Flat index of the cell containing (x, y), or None outside the grid."""
        c = math.floor((x - self.origin_x) / self.cellsize)
        r = self.nrows - 1 - math.floor((y - self.origin_y) / self.cellsize)
        if 0 <= c < self.ncols and 0 <= r < self.nrows:
            return r * self.ncols + c
        return None

    def col_range(self, xmin: float, xmax: float) -> tuple[int, int]:
        """Half-open column range whose centers may fall in [xmin, xmax]."""
        lo = math.floor((xmin - self.origin_x) / self.cellsize - 0.5)
        hi = math.ceil((xmax - self.origin_x) / self.cellsize - 0.5) + 1
        return max(lo, 0), min(hi, self.ncols)

    def row_range(self, ymin: float, ymax: float) -> tuple[int, int]:
        lo = math.floor(self.nrows - 0.5 - (ymax - self.origin_y) / self.cellsize)
        hi = math.ceil(self.nrows - 0.5 - (ymin - self.origin_y) / self.cellsize) + 1
        return max(lo, 0), min(hi, self.nrows)

    def to_dict(self) -> dict:
        return {"ncols": self.ncols, "nrows": self.nrows, "xllcorner": self.origin_x,
                "yllcorner": self.origin_y, "cellsize": self.cellsize,
                "NODATA_value": self.nodata}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Grid":
        return cls(int(d["ncols"]), int(d["nrows"]), float(d["xllcorner"]),
                   float(d["yllcorner"]), float(d["cellsize"]),
                   float(d.get("NODATA_value", DEFAULT_NODATA)))


@dataclass
class Band:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != self.grid.shape:
            if self.values.size != self.grid.size:
                raise GridMismatch(f"band has {self.values.size} cells, grid has {self.grid.size}")
            self.values = self.values.reshape(self.grid.shape)

    @classmethod
    def full(cls, grid: Grid, value: float = 0.0, dtype=np.float64) -> "Band":
        return cls(grid, np.full(grid.shape, value, dtype=dtype))

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def valid(self) -> np.ndarray:
        return self.values != self.grid.nodata

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, Band) and self.grid == other.grid
                and np.array_equal(self.values, other.values))


def _same_grid(*bands: Band) -> Grid:
    grid = bands[0].grid
    for b in bands[1:]:
        if b.grid != grid:
            raise GridMismatch("bands do not share a grid")
    return grid


@dataclass
class MultibandRaster:
    grid: Grid
    bands: dict[str, Band] = field(default_factory=dict)

    def __post_init__(self):
        for name, b in self.bands.items():
            if b.grid != self.grid:
                raise GridMismatch(f"band {name} is on a different grid")

    def __getitem__(self, name: str) -> Band:
        return self.bands[name]

    def with_indices(self) -> "MultibandRaster":
        bands = dict(self.bands)
        bands["NDVI"] = compute_ndvi(bands["NIR"], bands["RED"])
        bands["NDWI"] = compute_ndwi(bands["GREEN"], bands["NIR"])
        return MultibandRaster(self.grid, bands)

    def feature_matrix(self, cells: np.ndarray | None = None) -> np.ndarray:
        """Per-cell features in FEATURE_BANDS order, shape (n, 7)."""
        missing = [b for b in FEATURE_BANDS if b not in self.bands]
        if missing:
            raise KeyError(f"raster is missing bands {missing}")
        cols = [self.bands[b].flat for b in FEATURE_BANDS]
        if cells is not None:
            cols = [c[cells] for c in cols]
        return np.column_stack(cols).astype(np.float64)


# --- spectral indices -------------------------------------------------------

def _normalized_difference(a: Band, b: Band) -> Band:
    grid = _same_grid(a, b)
    x = a.values.astype(np.float64)
    y = b.values.astype(np.float64)
    nodata = (x == grid.nodata) | (y == grid.nodata)
    num = x - y
    den = x + y
    out = np.zeros(grid.shape)
    ok = (den != 0) & ~nodata
    np.divide(num, den, out=out, where=ok)
    out[nodata] = grid.nodata
    return Band(grid, out)


def compute_ndvi(nir: Band, red: Band) -> Band:
    """(NIR - RED) / (NIR + RED); zero-denominator cells are 0."""
    return _normalized_difference(nir, red)


def compute_ndwi(green: Band, nir: Band) -> Band:
    """(GREEN - NIR) / (GREEN + NIR); zero-denominator cells are 0."""
    return _normalized_difference(green, nir)


# --- zonal statistics -------------------------------------------------------

def _cellset(cells) -> np.ndarray:
    cells = np.unique(np.asarray(cells, dtype=np.int64))
    if cells.size == 0:
        raise ValueError("empty cell set")
    return cells


def zonal_mean(band: Band, cells) -> float:
    """Mean of non-nodata values over ``cells``; nodata if every cell is nodata."""
    cells = _cellset(cells)
    if cells[0] < 0 or cells[-1] >= band.grid.size:
        raise IndexError("cell set extends outside the grid")
    vals = band.flat[cells]
    vals = vals[vals != band.grid.nodata]
    if vals.size == 0:
        return band.grid.nodata
    return math.fsum(vals.tolist()) / vals.size


def class_proportions(class_band: Band, cells) -> dict[int, float]:
    """Fraction of the non-nodata cells carrying each class id."""
    cells = _cellset(cells)
    vals = class_band.flat[cells]
    vals = vals[vals != class_band.grid.nodata].astype(np.int64)
    if vals.size == 0:
        return {}
    ids, counts = np.unique(vals, return_counts=True)
    return {int(i): int(n) / vals.size for i, n in zip(ids, counts)}


# --- connected components and outlines -------------------------------------

_FOUR = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def connected_components(mask: Band) -> tuple[Band, int]:
    """4-connected labeling; labels follow raster-scan discovery order from 1."""
    m = mask.values != 0
    if mask.grid.nodata != 0:
        m &= mask.values != mask.grid.nodata
    raw, n = ndimage.label(m, structure=_FOUR)
    if n == 0:
        return Band(mask.grid, np.zeros(mask.grid.shape, dtype=np.int64)), 0
    flat = raw.reshape(-1)
    # first flat index of each raw label, then relabel in that order
    idx = np.flatnonzero(flat)
    labs = flat[idx]
    first = np.full(n + 1, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(first, labs, idx)
    order = np.argsort(first[1:], kind="stable")
    remap = np.zeros(n + 1, dtype=np.int64)
    remap[order + 1] = np.arange(1, n + 1)
    return Band(mask.grid, remap[raw]), int(n)


def component_cells(labels: Band, n: int | None = None) -> list[np.ndarray]:
    """Sorted flat cell indices per label 1..n."""
    flat = labels.flat
    if n is None:
        n = int(flat.max(initial=0))
    idx = np.flatnonzero(flat > 0)
    labs = flat[idx]
    order = np.argsort(labs, kind="stable")
    idx, labs = idx[order], labs[order]
    bounds = np.searchsorted(labs, np.arange(1, n + 2))
    return [idx[bounds[k]:bounds[k + 1]] for k in range(n)]


def trace_boundary(labels: Band, component: int) -> SimplePolygon:
    """Polygon along the outer cell edges of one labeled component.

    Interior holes (cells not in the component that are enclosed by it) come
    back as hole rings, so the polygon area always equals the cell count times
    the cell area.
    """
    cells = np.flatnonzero(labels.flat == component)
    if cells.size == 0:
        raise KeyError(f"unknown component {component}")
    return trace_cells(labels.grid, cells)


_LEFT = {(1, 0): (0, 1), (0, 1): (-1, 0), (-1, 0): (0, -1), (0, -1): (1, 0)}


def trace_cells(grid: Grid, cells: np.ndarray) -> SimplePolygon:
    nrows, ncols = grid.shape
    inside = np.zeros((nrows + 2, ncols + 2), dtype=bool)
    r, c = np.divmod(np.asarray(cells, dtype=np.int64), ncols)
    inside[r + 1, c + 1] = True

    # lattice coords: X = col, Y = nrows - row (y up); edges keep the interior on the left
    edges: dict[tuple[int, int], list[tuple[int, int]]] = {}

    def add(x0, y0, x1, y1):
        edges.setdefault((x0, y0), []).append((x1, y1))

    for rr, cc in zip(r.tolist(), c.tolist()):
        yb = nrows - rr - 1
        if not inside[rr + 2, cc + 1]:  # below
            add(cc, yb, cc + 1, yb)
        if not inside[rr + 1, cc + 2]:  # right
            add(cc + 1, yb, cc + 1, yb + 1)
        if not inside[rr, cc + 1]:  # above
            add(cc + 1, yb + 1, cc, yb + 1)
        if not inside[rr + 1, cc]:  # left
            add(cc, yb + 1, cc, yb)

    rings: list[list[tuple[int, int]]] = []
    for start in sorted(edges):
        while edges.get(start):
            ring = [start]
            prev, cur = start, edges[start].pop(0)
            while cur != start:
                ring.append(cur)
                outs = edges[cur]
                if len(outs) == 1:
                    nxt = outs.pop()
                else:
                    # pinch vertex: turn toward the interior so rings never cross
                    d = (cur[0] - prev[0], cur[1] - prev[1])
                    want = _LEFT[d]
                    pick = next((o for o in outs if (o[0] - cur[0], o[1] - cur[1]) == want), outs[0])
                    outs.remove(pick)
                    nxt = pick
                prev, cur = cur, nxt
            rings.append(_drop_collinear(ring))

    def lattice_area(ring):
        return sum(x0 * y1 - x1 * y0 for (x0, y0), (x1, y1) in zip(ring, ring[1:] + ring[:1])) / 2

    outer = [g for g in rings if lattice_area(g) > 0]
    holes = [g for g in rings if lattice_area(g) < 0]
    if len(outer) != 1:
        raise ValueError(f"component is not 4-connected ({len(outer)} outer rings)")

    def world(ring):
        return tuple(PlanarPoint(grid.origin_x + x * grid.cellsize, grid.origin_y + y * grid.cellsize)
                     for x, y in ring)

    return SimplePolygon(world(outer[0]), tuple(world(h) for h in holes))


def _drop_collinear(ring: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out = []
    n = len(ring)
    for i in range(n):
        a, b, c = ring[i - 1], ring[i], ring[(i + 1) % n]
        if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) != 0:
            out.append(b)
    # start from the lowest-then-leftmost vertex for a canonical ring
    k = min(range(len(out)), key=lambda i: (out[i][1], out[i][0]))
    return out[k:] + out[:k]


# --- band files -------------------------------------------------------------

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value")


def _fmt(v: float) -> str:
    return repr(float(v)) if not float(v).is_integer() else str(int(v))


def write_band(path: str | Path, band: Band) -> None:
    g = band.grid
    header = dict(zip(_HEADER_KEYS, (g.ncols, g.nrows, _fmt(g.origin_x), _fmt(g.origin_y),
                                      _fmt(g.cellsize), _fmt(g.nodata))))
    lines = [f"{k} {v}" for k, v in header.items()]
    vals = band.values.astype(np.float64)
    for row in vals:
        lines.append(" ".join("%.9g" % v for v in row.tolist()))
    Path(path).write_text("\n".join(lines) + "\n")


def read_band(path: str | Path) -> Band:
    path = Path(path)
    try:
        tokens = path.read_text().split()
    except OSError as e:
        raise InputError(str(e), str(path)) from e
    try:
        header = {}
        for i in range(0, 12, 2):
            header[tokens[i].lower()] = tokens[i + 1]
        grid = Grid(int(header["ncols"]), int(header["nrows"]), float(header["xllcorner"]),
                    float(header["yllcorner"]), float(header["cellsize"]),
                    float(header.get("nodata_value", DEFAULT_NODATA)))
        values = np.array(tokens[12:], dtype=np.float64)
    except (KeyError, ValueError, IndexError) as e:
        raise InputError(f"malformed band file ({e})", str(path)) from e
    if values.size != grid.size:
        raise InputError(f"expected {grid.size} values, found {values.size}", str(path))
    return Band(grid, values.reshape(grid.shape))


def write_raster(directory: str | Path, bands: Mapping[str, Band], manifest: str = "raster.json",
                 extra: dict | None = None) -> Path:
    """Write one band file per role plus a JSON manifest naming each file's role."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    grid = _same_grid(*bands.values())
    files = {}
    for name, band in bands.items():
        fname = f"{name.lower()}.asc"
        write_band(directory / fname, band)
        files[name] = fname
    doc = {"format": "parcelmap-raster/1", "grid": grid.to_dict(), "bands": files}
    if extra:
        doc.update(extra)
    out = directory / manifest
    out.write_text(json.dumps(doc, indent=2) + "\n")
    return out


def read_raster(manifest: str | Path) -> MultibandRaster:
    manifest = Path(manifest)
    try:
        doc = json.loads(manifest.read_text())
        files = doc["bands"]
    except (OSError, ValueError, KeyError) as e:
        raise InputError(f"bad raster manifest ({e})", str(manifest)) from e
    bands = {name: read_band(manifest.parent / fname) for name, fname in files.items()}
    grid = _same_grid(*bands.values())
    return MultibandRaster(grid, bands)


def stack_bands(grid: Grid, arrays: Mapping[str, Iterable]) -> MultibandRaster:
    return MultibandRaster(grid, {k: Band(grid, np.asarray(v, dtype=np.float64)) for k, v in arrays.items()})
