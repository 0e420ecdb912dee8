from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parcelmap.errors import EmptyParcelSet, StageError
from parcelmap.geometry import RoadClass, RoadPolyline, SimplePolygon, polygon_area
from parcelmap.parcels import generate_parcels, parcel_spectral_features
from parcelmap.raster import Band, Grid, MultibandRaster


def grid_roads(n: int, pitch: int, cs: float, rc=RoadClass.L3):
    ext = n * cs
    roads = []
    for k in range(1, n // pitch):
        c = (k * pitch + 0.5) * cs
        roads.append(RoadPolyline(f"v{k}", [(c, 0.0), (c, ext)], rc))
        roads.append(RoadPolyline(f"h{k}", [(0.0, c), (ext, c)], rc))
    return roads


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(6, 12), st.sampled_from(list(RoadClass)))
def test_grid_count_and_area_closed_form(strips, pitch, rc):
    n, cs = strips * pitch, 10.0
    g = Grid(n, n, 0.0, 0.0, cs)
    admin = SimplePolygon.rectangle(0.0, 0.0, n * cs, n * cs)
    layout = generate_parcels(admin, grid_roads(n, pitch, cs, rc), [], g)
    assert len(layout.parcels) == strips * strips
    width = {RoadClass.L1: 5, RoadClass.L2: 3, RoadClass.L3: 1}[rc]
    # road cells: (strips-1) full lines each way, minus the double-counted crossings
    k = strips - 1
    road_cells = 2 * k * width * n - (k * width) ** 2
    assert int(layout.road_mask.values.sum()) == road_cells
    assert sum(p.n_cells for p in layout.parcels) == n * n - road_cells


def test_water_and_admin_are_removed():
    g = Grid(10, 10, 0.0, 0.0, 10.0)
    admin = SimplePolygon.rectangle(0, 0, 80, 100)
    water = [SimplePolygon.rectangle(0, 0, 80, 20)]
    road = RoadPolyline(1, [(45.0, 0.0), (45.0, 100.0)], RoadClass.L3)
    layout = generate_parcels(admin, [road], water, g)
    assert [p.n_cells for p in layout.parcels] == [32, 24]
    admin_cells = int(layout.admin_mask.values.sum())
    removed = (layout.road_mask.values.astype(bool) | layout.water_mask.values.astype(bool)) & \
        layout.admin_mask.values.astype(bool)
    assert sum(p.n_cells for p in layout.parcels) == admin_cells - int(removed.sum())
    for p in layout.parcels:
        assert polygon_area(p.outline) == pytest.approx(p.area)
        assert np.all(layout.labels.flat[p.cells] == p.id)


def test_ids_follow_raster_scan_order():
    g = Grid(9, 9, 0.0, 0.0, 10.0)
    admin = SimplePolygon.rectangle(0, 0, 90, 90)
    roads = [RoadPolyline("a", [(45, 0), (45, 90)]), RoadPolyline("b", [(0, 45), (90, 45)])]
    layout = generate_parcels(admin, roads, [], g)
    firsts = [int(p.cells[0]) for p in layout.parcels]
    assert firsts == sorted(firsts) == [0, 5, 45, 50]


def test_min_cells_filters_slivers():
    g = Grid(10, 3, 0.0, 0.0, 10.0)
    admin = SimplePolygon.rectangle(0, 0, 100, 30)
    road = RoadPolyline(1, [(15, 0), (15, 30)])
    assert len(generate_parcels(admin, [road], [], g).parcels) == 2
    layout = generate_parcels(admin, [road], [], g, min_cells=4)
    assert [p.id for p in layout.parcels] == [1] and layout.parcels[0].n_cells == 24
    assert layout.parcels[0].area == pytest.approx(2400.0)


def test_everything_water_raises():
    g = Grid(4, 4, 0.0, 0.0, 1.0)
    admin = SimplePolygon.rectangle(0, 0, 4, 4)
    with pytest.raises(EmptyParcelSet):
        generate_parcels(admin, [], [admin], g)


def test_all_nodata_parcel_is_a_stage_error():
    g = Grid(2, 1, 0.0, 0.0, 1.0)
    layout = generate_parcels(SimplePolygon.rectangle(0, 0, 2, 1), [], [], g)
    bands = {b: Band(g, np.full((1, 2), -9999.0)) for b in ("RED", "GREEN", "BLUE", "NIR", "SWIR1")}
    raster = MultibandRaster(g, bands).with_indices()
    with pytest.raises(StageError):
        parcel_spectral_features(layout.parcels[0], raster)
