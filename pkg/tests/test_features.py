from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parcelmap.features import (FeatureVector, PoiPoint, SchemaMismatch, assemble_parcel_features, category_of,
                                density_maps, feature_categories, feature_group, feature_schema, kernel_density,
                                parcel_feature_table, poi_density_feature)
from parcelmap.geometry import PlanarPoint
from parcelmap.parcels import Parcel
from parcelmap.raster import Band, Grid, trace_cells
from parcelmap.scheme import DEFAULT_SCHEME as S, Level

G = Grid(20, 20, 0.0, 0.0, 50.0)
L2 = feature_categories(S, Level.L2)
L1 = feature_categories(S, Level.L1)


def poi(i, x, y, code="Com"):
    return PoiPoint(i, PlanarPoint(x, y), S.by_code(code, Level.L2).id)


def test_schema_lengths():
    assert len(feature_schema(S, L2, True)) == 25
    assert len(feature_schema(S, L2, False)) == 16
    assert len(feature_schema(S, L1, True)) == 15
    sch = feature_schema(S, L2, True)
    assert sch[:7] == ("RED", "GREEN", "BLUE", "NIR", "SWIR1", "NDVI", "NDWI")
    assert sch[7] == "POI_Vil" and sch[16] == "AOI_Vil"
    assert [feature_group(n) for n in ("NDVI", "POI_Com", "AOI_Tra")] == ["spectral", "POI", "AOI"]


def test_category_mapping():
    vil = S.by_code("Vil", Level.L2).id
    assert category_of(S, vil, L2) == vil
    assert category_of(S, vil, L1) == S.by_code("R", Level.L1).id
    with pytest.raises(ValueError):
        category_of(S, S.by_code("For", Level.L2).id, L2)


def test_no_points_gives_zero_band():
    assert not kernel_density([], G, 300.0).values.any()


def test_bandwidth_must_be_positive():
    with pytest.raises(ValueError):
        kernel_density([], G, 0.0)


pts = st.lists(st.tuples(st.floats(-200, 1200), st.floats(-200, 1200)), max_size=6)


@settings(max_examples=50, deadline=None)
@given(pts, pts)
def test_density_is_additive(a, b):
    pa = [poi(i + 1, x, y) for i, (x, y) in enumerate(a)]
    pb = [poi(100 + i, x, y) for i, (x, y) in enumerate(b)]
    both = kernel_density(pa + pb, G, 300.0).values
    np.testing.assert_allclose(both, kernel_density(pa, G, 300.0).values + kernel_density(pb, G, 300.0).values,
                               rtol=1e-12, atol=1e-18)


def test_density_independent_of_point_order():
    ps = [poi(i, 17.0 * i, 500.0 - 13.0 * i) for i in range(1, 30)]
    a = kernel_density(ps, G, 400.0).values
    b = kernel_density(list(reversed(ps)), G, 400.0).values
    assert np.array_equal(a, b)


def test_density_maps_route_by_category():
    ps = [poi(1, 100, 100, "Com"), poi(2, 900, 900, "Mar")]
    maps = density_maps(ps, G, L2, S, 300.0, workers=3)
    com, mar = S.by_code("Com", Level.L2).id, S.by_code("Mar", Level.L2).id
    assert maps[com].flat[G.locate(100, 100)] == 1.0
    assert maps[mar].flat[G.locate(900, 900)] == 1.0
    assert not maps[S.by_code("Edu", Level.L2).id].values.any()


def _parcel(cells, grid=G):
    cells = np.asarray(cells)
    return Parcel(1, cells, trace_cells(grid, cells), len(cells) * grid.cell_area)


def test_poi_density_feature_mean():
    g = Grid(4, 1, 0.0, 0.0, 1.0)
    b = Band(g, np.array([[0.0, 0.8, 0.0, 0.8]]))
    assert poi_density_feature(_parcel([0, 1, 2, 3], g), b) == pytest.approx(0.4)
    assert poi_density_feature(_parcel([3], g), b) == pytest.approx(0.8)
    assert poi_density_feature(_parcel([0], g), b) == 0.0


def test_assemble_order_and_mismatch():
    cats = L1
    poi_v = {c: float(i) for i, c in enumerate(cats)}
    aoi_v = {c: 0.1 * i for i, c in enumerate(cats)}
    fv = assemble_parcel_features([1, 2, 3, 4, 5, 6, 7], poi_v, aoi_v, cats, S, include_aoi=True)
    assert isinstance(fv, FeatureVector)
    assert fv.values[:7] == (1, 2, 3, 4, 5, 6, 7)
    assert fv.values[7:11] == (0.0, 1.0, 2.0, 3.0)
    fv2 = assemble_parcel_features([1] * 7, poi_v, aoi_v, cats, S, include_aoi=False)
    assert len(fv2.values) == 11
    with pytest.raises(SchemaMismatch):
        assemble_parcel_features([1] * 6, poi_v, aoi_v, cats, S, include_aoi=True)


def test_feature_table_matches_components(small_city):
    ds = small_city
    parcels = ds.layout.parcels[:5]
    t = parcel_feature_table(parcels, ds.inputs.raster, ds.inputs.pois, ds.inputs.aois, S, workers=2)
    assert t.matrix.shape == (5, 25)
    t1 = parcel_feature_table(parcels, ds.inputs.raster, ds.inputs.pois, ds.inputs.aois, S, workers=1)
    assert np.array_equal(t.matrix, t1.matrix)
    no = t.drop("AOI_")
    assert no.schema == t.schema[:16] and np.array_equal(no.matrix, t.matrix[:, :16])
