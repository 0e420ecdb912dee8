"""GeoJSON and CSV readers/writers for pipeline layers and outputs.

Layer conventions (planar metric coordinates, no CRS handling):

* roads: LineString / MultiLineString, ``road_class`` 1-3, optional ``id``
* admin, water: Polygon / MultiPolygon
* pois: Point with ``category`` (scheme code) and optional ``id``
* aois: Polygon / MultiPolygon with ``category``
* pixel blocks: Polygon with ``class`` (scheme code)
* parcel samples CSV: ``parcel_id,class``
* truth CSV: ``parcel_id,level0,level1,level2[,split]`` (codes; finer levels may be blank)
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError
from .features import AoiFootprint, ParcelFeatureTable, PoiPoint
from .geometry import PlanarPoint, RoadClass, RoadPolyline, SimplePolygon, validate_polygon
from .pipeline import LandUseMap, ParcelTrainingSample, PixelTrainingBlock
from .raster import Grid
from .scheme import CategoryScheme, DEFAULT_SCHEME, Level, SchemeError


# --- generic ------------------------------------------------------------------

def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dump_json(path: str | Path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_geojson(path: str | Path) -> list[dict]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise InputError(str(e), str(path)) from e
    except ValueError as e:
        raise InputError(f"invalid JSON ({e})", str(path)) from e
    if doc.get("type") == "Feature":
        return [doc]
    if doc.get("type") != "FeatureCollection" or not isinstance(doc.get("features"), list):
        raise InputError("expected a GeoJSON FeatureCollection", str(path))
    return doc["features"]


def _feature_id(feat: dict, index: int):
    props = feat.get("properties") or {}
    fid = props.get("id", feat.get("id", index + 1))
    if isinstance(fid, float) and fid.is_integer():
        fid = int(fid)
    return fid


def _geometry(feat: dict, kinds: Sequence[str], path) -> tuple[str, list]:
    geom = feat.get("geometry") or {}
    kind = geom.get("type")
    if kind not in kinds:
        raise InputError(f"feature {_feature_id(feat, -1)!r}: geometry {kind!r} not in {list(kinds)}", str(path))
    return kind, geom.get("coordinates")


def _point(c, path) -> PlanarPoint:
    try:
        return PlanarPoint(float(c[0]), float(c[1]))
    except (TypeError, ValueError, IndexError) as e:
        raise InputError(f"bad coordinate {c!r}", str(path)) from e


def _polygon(rings, path, fid) -> SimplePolygon:
    try:
        pts = [[_point(c, path) for c in ring] for ring in rings]
        poly = SimplePolygon.from_rings(pts[0], pts[1:])
        validate_polygon(poly)
    except (ValueError, IndexError, TypeError) as e:
        raise InputError(f"feature {fid!r}: {e}", str(path)) from e
    return poly


def _polygons_of(feat: dict, index: int, path) -> list[SimplePolygon]:
    kind, coords = _geometry(feat, ("Polygon", "MultiPolygon"), path)
    fid = _feature_id(feat, index)
    parts = [coords] if kind == "Polygon" else coords
    return [_polygon(rings, path, fid) for rings in parts]


def _code(scheme: CategoryScheme, code, path, fid, level: Level | None = None) -> int:
    try:
        return scheme.by_code(str(code), level).id if level is not None else scheme.find_code(str(code)).id
    except (KeyError, SchemeError) as e:
        raise InputError(f"feature {fid!r}: unknown class code {code!r}", str(path)) from e


# --- readers ------------------------------------------------------------------

def read_polygons(path: str | Path) -> list[SimplePolygon]:
    out = []
    for i, feat in enumerate(_load_geojson(path)):
        out += _polygons_of(feat, i, path)
    return out


def read_roads(path: str | Path) -> list[RoadPolyline]:
    roads = []
    for i, feat in enumerate(_load_geojson(path)):
        kind, coords = _geometry(feat, ("LineString", "MultiLineString"), path)
        fid = _feature_id(feat, i)
        props = feat.get("properties") or {}
        try:
            rc = RoadClass(int(props.get("road_class", 3)))
        except (TypeError, ValueError) as e:
            raise InputError(f"road {fid!r}: road_class must be 1, 2 or 3", str(path)) from e
        parts = [coords] if kind == "LineString" else coords
        for k, line in enumerate(parts):
            rid = fid if len(parts) == 1 else f"{fid}.{k + 1}"
            try:
                roads.append(RoadPolyline(rid, [_point(c, path) for c in line], rc))
            except ValueError as e:
                raise InputError(f"road {rid!r}: {e}", str(path)) from e
    ids = [r.id for r in roads]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate road ids", str(path))
    return roads


def read_pois(path: str | Path, scheme: CategoryScheme = DEFAULT_SCHEME) -> list[PoiPoint]:
    out = []
    for i, feat in enumerate(_load_geojson(path)):
        _, coords = _geometry(feat, ("Point",), path)
        fid = _feature_id(feat, i)
        cat = _code(scheme, (feat.get("properties") or {}).get("category"), path, fid)
        out.append(PoiPoint(fid, _point(coords, path), cat))
    return out


def read_aois(path: str | Path, scheme: CategoryScheme = DEFAULT_SCHEME) -> list[AoiFootprint]:
    out = []
    for i, feat in enumerate(_load_geojson(path)):
        fid = _feature_id(feat, i)
        cat = _code(scheme, (feat.get("properties") or {}).get("category"), path, fid)
        polys = _polygons_of(feat, i, path)
        for k, poly in enumerate(polys):
            out.append(AoiFootprint(fid if len(polys) == 1 else f"{fid}.{k + 1}", poly, cat))
    return out


def read_pixel_blocks(path: str | Path, grid: Grid,
                      scheme: CategoryScheme = DEFAULT_SCHEME) -> list[PixelTrainingBlock]:
    out = []
    for i, feat in enumerate(_load_geojson(path)):
        fid = _feature_id(feat, i)
        props = feat.get("properties") or {}
        label = _code(scheme, props.get("class"), path, fid)
        for poly in _polygons_of(feat, i, path):
            block = PixelTrainingBlock.from_polygon(fid, poly, label, grid, str(props.get("note", "")))
            if len(block.cells) == 0:
                raise InputError(f"pixel block {fid!r} covers no cell centers", str(path))
            out.append(block)
    return out


def _read_csv(path: str | Path, required: Sequence[str]) -> list[dict]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as e:
        raise InputError(str(e), str(path)) from e
    if rows:
        missing = [c for c in required if c not in rows[0]]
        if missing:
            raise InputError(f"missing columns {missing}", str(path))
    return rows


def _int_id(value, path, line) -> int:
    try:
        return int(value)
    except (TypeError, ValueError) as e:
        raise InputError(f"line {line}: parcel id {value!r} is not an integer", str(path)) from e


def read_parcel_samples(path: str | Path, scheme: CategoryScheme = DEFAULT_SCHEME) -> list[ParcelTrainingSample]:
    out = []
    for n, row in enumerate(_read_csv(path, ("parcel_id", "class")), start=2):
        pid = _int_id(row["parcel_id"], path, n)
        out.append(ParcelTrainingSample(pid, _code(scheme, row["class"], path, pid)))
    return out


def read_truth(path: str | Path, scheme: CategoryScheme = DEFAULT_SCHEME,
               split: str | None = None) -> dict[int, int]:
    """Parcel id -> finest reference class id given.

    ``split`` keeps only rows whose ``split`` column matches; files without that
    column are used whole.
    """
    out = {}
    for n, row in enumerate(_read_csv(path, ("parcel_id",)), start=2):
        if split is not None and "split" in row and row["split"] != split:
            continue
        pid = _int_id(row["parcel_id"], path, n)
        finest = None
        for lv in (Level.L0, Level.L1, Level.L2):
            code = (row.get(f"level{int(lv)}") or "").strip()
            if code:
                cid = _code(scheme, code, path, pid, lv)
                if finest is not None and scheme.ancestor_at(cid, Level(lv - 1)).id != finest:
                    raise InputError(f"parcel {pid}: {code} is not under the coarser label", str(path))
                finest = cid
        if finest is None:
            raise InputError(f"parcel {pid}: no label", str(path))
        out[pid] = finest
    return out


def read_labels(path: str | Path, scheme: CategoryScheme = DEFAULT_SCHEME) -> dict[int, dict[Level, int]]:
    """Predicted labels from a map GeoJSON or a labels CSV."""
    path = Path(path)
    out: dict[int, dict[Level, int]] = {}
    if path.suffix.lower() in (".geojson", ".json"):
        rows = [dict(f.get("properties") or {}) for f in _load_geojson(path)]
    else:
        rows = _read_csv(path, ("parcel_id",))
    for n, row in enumerate(rows, start=2):
        pid = _int_id(row.get("parcel_id"), path, n)
        labs = {}
        for lv in Level:
            code = row.get(f"level{int(lv)}")
            if code not in (None, ""):
                labs[lv] = _code(scheme, code, path, pid, lv)
        out[pid] = labs
    return out


# --- writers ------------------------------------------------------------------

def _ring_coords(ring) -> list[list[float]]:
    pts = [[float(p.x), float(p.y)] for p in ring]
    return pts + [pts[0]]


def polygon_geometry(poly: SimplePolygon) -> dict:
    return {"type": "Polygon", "coordinates": [_ring_coords(r) for r in poly.rings]}


def feature_collection(features: Iterable[dict]) -> dict:
    return {"type": "FeatureCollection", "features": list(features)}


def write_geojson(path: str | Path, features: Iterable[dict]) -> None:
    Path(path).write_text(json.dumps(feature_collection(features), separators=(",", ":"), sort_keys=True) + "\n")


def write_polygons(path: str | Path, polys: Sequence[SimplePolygon]) -> None:
    write_geojson(path, [{"type": "Feature", "properties": {"id": i + 1}, "geometry": polygon_geometry(p)}
                         for i, p in enumerate(polys)])


def write_roads(path: str | Path, roads: Sequence[RoadPolyline]) -> None:
    write_geojson(path, [{"type": "Feature", "properties": {"id": r.id, "road_class": int(r.road_class)},
                          "geometry": {"type": "LineString",
                                       "coordinates": [[float(v.x), float(v.y)] for v in r.vertices]}}
                         for r in roads])


def write_pois(path: str | Path, pois: Sequence[PoiPoint], scheme: CategoryScheme = DEFAULT_SCHEME) -> None:
    write_geojson(path, [{"type": "Feature", "properties": {"id": p.id, "category": scheme[p.category].code},
                          "geometry": {"type": "Point",
                                       "coordinates": [float(p.location.x), float(p.location.y)]}}
                         for p in pois])


def write_aois(path: str | Path, aois: Sequence[AoiFootprint], scheme: CategoryScheme = DEFAULT_SCHEME) -> None:
    write_geojson(path, [{"type": "Feature", "properties": {"id": a.id, "category": scheme[a.category].code},
                          "geometry": polygon_geometry(a.footprint)} for a in aois])


def write_pixel_blocks(path: str | Path, blocks: Sequence[tuple[int, SimplePolygon, int, str]],
                       scheme: CategoryScheme = DEFAULT_SCHEME) -> None:
    """``blocks`` as (id, polygon, class id, note)."""
    write_geojson(path, [{"type": "Feature",
                          "properties": {"id": bid, "class": scheme[label].code, "note": note},
                          "geometry": polygon_geometry(poly)} for bid, poly, label, note in blocks])


def _write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def write_parcel_samples(path: str | Path, samples: Sequence[ParcelTrainingSample],
                         scheme: CategoryScheme = DEFAULT_SCHEME) -> None:
    _write_csv(path, ("parcel_id", "class"), [(s.parcel_id, scheme[s.label].code) for s in samples])


def write_truth(path: str | Path, truth: Mapping[int, int], splits: Mapping[int, str],
                scheme: CategoryScheme = DEFAULT_SCHEME) -> None:
    rows = []
    for pid in sorted(truth):
        codes = [scheme.ancestor_at(truth[pid], lv).code for lv in Level]
        rows.append((pid, *codes, splits.get(pid, "")))
    _write_csv(path, ("parcel_id", "level0", "level1", "level2", "split"), rows)


def _code_or_blank(scheme, cid):
    return "" if cid is None else scheme[cid].code


def write_labels(path: str | Path, land_map: LandUseMap) -> None:
    s = land_map.scheme
    rows = []
    for pid in sorted(land_map.labels):
        lab = land_map.labels[pid]
        bp = "" if lab.builtup_proportion is None else repr(float(lab.builtup_proportion))
        rows.append((pid, _code_or_blank(s, lab.level0), _code_or_blank(s, lab.level1),
                     _code_or_blank(s, lab.level2), lab.strategy, bp))
    _write_csv(path, ("parcel_id", "level0", "level1", "level2", "strategy", "builtup_proportion"), rows)


def write_map(path: str | Path, land_map: LandUseMap) -> None:
    s = land_map.scheme
    feats = []
    for p in land_map.parcels:
        lab = land_map.labels[p.id]
        props = {
            "parcel_id": p.id,
            "area": float(p.area),
            "cells": int(p.n_cells),
            "level0": _code_or_blank(s, lab.level0),
            "level1": _code_or_blank(s, lab.level1),
            "level2": _code_or_blank(s, lab.level2),
            "strategy": lab.strategy,
            "builtup_proportion": lab.builtup_proportion,
            "votes": {s[k].code: v for k, v in sorted(lab.votes.items())},
        }
        feats.append({"type": "Feature", "properties": props, "geometry": polygon_geometry(p.outline)})
    write_geojson(path, feats)


def write_feature_table(path: str | Path, table: ParcelFeatureTable) -> None:
    _write_csv(path, ("parcel_id", *table.schema),
               [(pid, *(repr(float(v)) for v in row)) for pid, row in zip(table.parcel_ids, table.matrix)])


def read_feature_table(path: str | Path) -> ParcelFeatureTable:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise InputError(str(e), str(path)) from e
    if not rows or rows[0][0] != "parcel_id":
        raise InputError("feature table must start with a parcel_id column", str(path))
    schema = tuple(rows[0][1:])
    try:
        ids = [int(r[0]) for r in rows[1:]]
        matrix = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    except ValueError as e:
        raise InputError(f"non-numeric feature value ({e})", str(path)) from e
    return ParcelFeatureTable(schema, ids, matrix.reshape(len(ids), len(schema)))


# --- dataset directories ------------------------------------------------------------

DATASET_LAYERS = {
    "raster": "raster/raster.json",
    "admin": "admin.geojson",
    "roads": "roads.geojson",
    "water": "water.geojson",
    "pois": "pois.geojson",
    "aois": "aois.geojson",
    "pixel_blocks": "pixel_blocks.geojson",
    "parcel_samples": "parcel_samples.csv",
    "truth": "truth.csv",
    "scheme": "scheme.json",
}
REQUIRED_LAYERS = ("raster", "admin", "roads")


def dataset_paths(directory: str | Path) -> dict[str, Path | None]:
    """Conventional layer paths inside a dataset directory; absent files map to None."""
    d = Path(directory)
    return {k: (d / v if (d / v).exists() else None) for k, v in DATASET_LAYERS.items()}


def load_scheme(path: str | Path | None) -> CategoryScheme:
    if path is None:
        return DEFAULT_SCHEME
    try:
        return CategoryScheme.load(path)
    except (OSError, ValueError, KeyError, SchemeError) as e:
        raise InputError(f"bad category scheme ({e})", str(path)) from e


def load_city_inputs(paths: Mapping[str, str | Path | None]):
    """Read every layer named in ``paths`` into a :class:`CityInputs`."""
    from .pipeline import CityInputs
    from .raster import read_raster

    for key in REQUIRED_LAYERS:
        if not paths.get(key):
            raise InputError(f"missing required input layer '{key}'")
    for key, p in paths.items():
        if p and not Path(p).exists():
            raise InputError("file not found", str(p))
    scheme = load_scheme(paths.get("scheme"))
    raster = read_raster(paths["raster"])
    grid = raster.grid

    def opt(key, reader, *args):
        return reader(paths[key], *args) if paths.get(key) else []

    return CityInputs(
        grid=grid,
        raster=raster,
        admin=read_polygons(paths["admin"]),
        roads=read_roads(paths["roads"]),
        water=opt("water", read_polygons),
        pois=opt("pois", read_pois, scheme),
        aois=opt("aois", read_aois, scheme),
        pixel_blocks=opt("pixel_blocks", read_pixel_blocks, grid, scheme),
        parcel_samples=opt("parcel_samples", read_parcel_samples, scheme),
        scheme=scheme,
    )


def write_manifest(directory: str | Path, name: str = "manifest.json", extra: Mapping | None = None) -> Path:
    """Hash every file under ``directory`` (except the manifest) into a JSON manifest."""
    d = Path(directory)
    files = {p.relative_to(d).as_posix(): sha256_file(p)
             for p in sorted(d.rglob("*")) if p.is_file() and p.name != name}
    doc = {"files": files}
    if extra:
        doc.update(extra)
    out = d / name
    dump_json(out, doc)
    return out
