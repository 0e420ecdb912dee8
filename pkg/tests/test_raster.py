from __future__ import annotations

from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from parcelmap.errors import InputError
from parcelmap.geometry import polygon_area, ring_signed_area
from parcelmap.raster import (Band, Grid, MultibandRaster, class_proportions, component_cells,
                              connected_components, read_band, read_raster, trace_boundary, trace_cells,
                              write_band, write_raster, zonal_mean)


def bfs_components(mask: np.ndarray) -> np.ndarray:
    """Reference 4-connected labeling in raster-scan discovery order."""
    nr, nc = mask.shape
    out = np.zeros(mask.shape, dtype=np.int64)
    n = 0
    for r in range(nr):
        for c in range(nc):
            if mask[r, c] and not out[r, c]:
                n += 1
                out[r, c] = n
                q = deque([(r, c)])
                while q:
                    y, x = q.popleft()
                    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < nr and 0 <= xx < nc and mask[yy, xx] and not out[yy, xx]:
                            out[yy, xx] = n
                            q.append((yy, xx))
    return out


masks = st.tuples(st.integers(1, 12), st.integers(1, 12)).flatmap(
    lambda s: arrays(np.bool_, s, elements=st.booleans()))


def test_grid_geometry():
    g = Grid(4, 3, 100.0, 200.0, 10.0)
    assert g.shape == (3, 4) and g.size == 12 and g.cell_area == 100.0
    assert g.extent == (100.0, 200.0, 140.0, 230.0)
    # row 0 is the top row
    assert tuple(g.cell_center(0)) == (105.0, 225.0)
    assert tuple(g.cell_center(11)) == (135.0, 205.0)
    assert g.locate(105.0, 225.0) == 0
    assert g.locate(139.9, 200.1) == 11
    assert g.locate(99.0, 210.0) is None
    assert Grid.from_dict(g.to_dict()) == g


def test_grid_rejects_bad_sizes():
    with pytest.raises(ValueError):
        Grid(0, 3, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        Grid(3, 3, 0.0, 0.0, -1.0)


@settings(max_examples=200)
@given(masks)
def test_components_match_bfs(mask):
    g = Grid(mask.shape[1], mask.shape[0], 0.0, 0.0, 1.0)
    labels, n = connected_components(Band(g, mask.astype(np.int64)))
    ref = bfs_components(mask)
    assert n == ref.max()
    np.testing.assert_array_equal(labels.values, ref)


@settings(max_examples=200)
@given(masks)
def test_traced_area_equals_cell_count(mask):
    g = Grid(mask.shape[1], mask.shape[0], 0.0, 0.0, 2.0)
    labels, n = connected_components(Band(g, mask.astype(np.int64)))
    for k, cells in enumerate(component_cells(labels, n), start=1):
        poly = trace_boundary(labels, k)
        assert polygon_area(poly) == pytest.approx(len(cells) * g.cell_area)
        assert ring_signed_area(poly.exterior) > 0
        assert all(ring_signed_area(h) < 0 for h in poly.holes)


def test_trace_single_cell_and_rectangle():
    g = Grid(5, 4, 0.0, 0.0, 10.0)
    p = trace_cells(g, np.array([0]))
    assert set(p.exterior) == {(0.0, 30.0), (10.0, 30.0), (10.0, 40.0), (0.0, 40.0)}
    # 2x3 block: collinear vertices dropped, four corners remain
    cells = np.array([r * 5 + c for r in (1, 2) for c in (1, 2, 3)])
    p = trace_cells(g, cells)
    assert len(p.exterior) == 4
    assert p.exterior[0] == (10.0, 10.0)  # lowest, then leftmost
    assert polygon_area(p) == 600.0


def test_trace_ring_with_hole():
    g = Grid(3, 3, 0.0, 0.0, 1.0)
    cells = np.array([0, 1, 2, 3, 5, 6, 7, 8])
    p = trace_cells(g, cells)
    assert len(p.holes) == 1
    assert polygon_area(p) == 8.0


def test_zonal_mean_and_nodata():
    g = Grid(4, 1, 0.0, 0.0, 1.0)
    b = Band(g, np.array([[1.0, 2.0, -9999.0, 4.0]]))
    assert zonal_mean(b, [0, 1]) == 1.5
    assert zonal_mean(b, [0, 1, 2, 3]) == pytest.approx(7 / 3)
    assert zonal_mean(b, [2]) == -9999.0
    assert zonal_mean(b, [1, 1, 0]) == 1.5  # duplicates ignored
    with pytest.raises(ValueError):
        zonal_mean(b, [])
    with pytest.raises(IndexError):
        zonal_mean(b, [4])


def test_class_proportions():
    g = Grid(5, 1, 0.0, 0.0, 1.0)
    b = Band(g, np.array([[3, 3, 5, -9999, 7]]))
    assert class_proportions(b, range(5)) == {3: 0.5, 5: 0.25, 7: 0.25}
    assert class_proportions(b, [3]) == {}


@given(arrays(np.float64, (3, 4), elements=st.floats(-1e6, 1e6, allow_nan=False, width=32)))
def test_band_file_round_trip(tmp_path_factory, values):
    g = Grid(4, 3, -50.5, 1000.0, 2.5)
    path = tmp_path_factory.mktemp("b") / "x.asc"
    write_band(path, Band(g, values))
    back = read_band(path)
    assert back.grid == g
    np.testing.assert_allclose(back.values, values, rtol=1e-8)


def test_band_file_header(tmp_path):
    g = Grid(2, 2, 0.0, 10.0, 5.0)
    write_band(tmp_path / "a.asc", Band(g, np.array([[1.0, 2.0], [3.5, -9999.0]])))
    lines = (tmp_path / "a.asc").read_text().splitlines()
    assert lines[:6] == ["ncols 2", "nrows 2", "xllcorner 0", "yllcorner 10", "cellsize 5", "NODATA_value -9999"]
    assert lines[6:] == ["1 2", "3.5 -9999"]


def test_malformed_band_file(tmp_path):
    p = tmp_path / "bad.asc"
    p.write_text("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2 3\n")
    with pytest.raises(InputError):
        read_band(p)
    with pytest.raises(InputError):
        read_band(tmp_path / "missing.asc")


def test_raster_manifest_round_trip(tmp_path):
    g = Grid(3, 2, 0.0, 0.0, 1.0)
    rng = np.random.default_rng(0)
    bands = {n: Band(g, rng.random((2, 3))) for n in ("RED", "GREEN", "BLUE", "NIR", "SWIR1")}
    manifest = write_raster(tmp_path, bands)
    r = read_raster(manifest)
    assert list(r.bands) == list(bands)
    for n in bands:
        np.testing.assert_allclose(r[n].values, bands[n].values, rtol=1e-8)
    full = r.with_indices()
    assert full.feature_matrix().shape == (6, 7)


def test_multiband_rejects_mixed_grids():
    a = Band(Grid(2, 2, 0.0, 0.0, 1.0), np.zeros((2, 2)))
    b = Band(Grid(2, 2, 1.0, 0.0, 1.0), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        MultibandRaster(a.grid, {"RED": a, "NIR": b})
