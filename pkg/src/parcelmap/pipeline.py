"""Two-stage parcel land-use mapping and the one-stage baseline.

Coarse stage: a pixel forest on the seven spectral features classifies every
cell inside the admin area; each parcel's share of built-up pixels decides its
region (strictly greater than the threshold means built-up).

Fine stage: non-built-up parcels take the most common non-built-up pixel class;
built-up parcels are labeled by a parcel forest on spectral, POI-density and
(optionally) AOI-proportion features.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .errors import StageError
from .evaluate import ConfusionMatrix, build_confusion
from .features import (AoiFootprint, DEFAULT_BANDWIDTH, FeatureVector, ParcelFeatureTable, PoiPoint,
                       parcel_feature_table)
from .forest import ForestModel, TrainConfig, train
from .geometry import RoadPolyline, SimplePolygon, repair_topology
from .parcels import Parcel, ParcelLayout, generate_parcels
from .raster import FEATURE_BANDS, Band, Grid, MultibandRaster, class_proportions
from .rasterize import polygon_cells
from .rng import derive_seed
from .scheme import CategoryScheme, DEFAULT_SCHEME, Level

log = logging.getLogger(__name__)

BUILTUP_THRESHOLD = 0.37


@dataclass(frozen=True)
class PipelineConfig:
    builtup_threshold: float = BUILTUP_THRESHOLD
    pixel_train_level: Level = Level.L2
    feature_level: Level = Level.L2
    poi_bandwidth: float = DEFAULT_BANDWIDTH
    include_aoi: bool = True
    min_cells: int = 1
    repair_roads: bool = True
    pixel_forest: TrainConfig = TrainConfig()
    parcel_forest: TrainConfig = TrainConfig()
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.builtup_threshold < 1:
            raise ValueError("builtup_threshold must lie in (0, 1)")
        object.__setattr__(self, "pixel_train_level", Level.parse(self.pixel_train_level))
        object.__setattr__(self, "feature_level", Level.parse(self.feature_level))
        if self.pixel_train_level == Level.L0 or self.feature_level == Level.L0:
            raise ValueError("training and feature levels must be L1 or L2")

    def forest_config(self, which: str) -> TrainConfig:
        """Forest config with its seed derived from the pipeline seed."""
        base = self.pixel_forest if which == "pixel" else self.parcel_forest
        return replace(base, seed=derive_seed(self.seed, f"{which}-forest"))

    def to_dict(self) -> dict:
        from dataclasses import asdict
        d = asdict(self)
        d["pixel_train_level"] = self.pixel_train_level.name
        d["feature_level"] = self.feature_level.name
        d["pixel_forest"]["seed"] = self.forest_config("pixel").seed
        d["parcel_forest"]["seed"] = self.forest_config("parcel").seed
        return d


@dataclass
class PixelTrainingBlock:
    id: int
    cells: np.ndarray
    label: int
    note: str = ""

    @classmethod
    def from_polygon(cls, id: int, poly: SimplePolygon, label: int, grid: Grid, note: str = ""):
        return cls(id, polygon_cells(poly, grid), label, note)


@dataclass(frozen=True)
class ParcelTrainingSample:
    parcel_id: int
    label: int


@dataclass
class CityInputs:
    grid: Grid
    raster: MultibandRaster
    admin: list[SimplePolygon]
    roads: list[RoadPolyline]
    water: list[SimplePolygon]
    pois: list[PoiPoint]
    aois: list[AoiFootprint]
    pixel_blocks: list[PixelTrainingBlock]
    parcel_samples: list[ParcelTrainingSample]
    scheme: CategoryScheme = DEFAULT_SCHEME

    def __post_init__(self):
        if self.raster.grid != self.grid:
            raise StageError("inputs", "raster grid differs from the analysis grid")
        if "NDVI" not in self.raster.bands or "NDWI" not in self.raster.bands:
            self.raster = self.raster.with_indices()


@dataclass
class ParcelLabel:
    parcel_id: int
    level0: int
    level1: int
    level2: int | None
    strategy: str
    builtup_proportion: float | None = None
    votes: dict[int, float] = field(default_factory=dict)


@dataclass
class LandUseMap:
    scheme: CategoryScheme
    grid: Grid
    parcels: list[Parcel]
    labels: dict[int, ParcelLabel]
    method: str
    stats: dict = field(default_factory=dict)
    pixel_map: Band | None = None
    model: ForestModel | None = None

    def label_at(self, parcel_id: int, level: Level | str) -> int | None:
        lab = self.labels[parcel_id]
        return (lab.level0, lab.level1, lab.level2)[Level.parse(level)]

    def class_band(self, level: Level | str = Level.L2) -> Band:
        lv = Level.parse(level)
        nod = int(self.grid.nodata)
        vals = np.full(self.grid.size, nod, dtype=np.int64)
        for p in self.parcels:
            v = self.label_at(p.id, lv)
            if v is None and lv == Level.L2:
                v = self.labels[p.id].level1
            vals[p.cells] = v
        return Band(self.grid, vals.reshape(self.grid.shape))


# --- coarse stage -----------------------------------------------------------

def train_pixel_model(raster: MultibandRaster, blocks: Sequence[PixelTrainingBlock],
                      config: PipelineConfig = PipelineConfig(), scheme: CategoryScheme = DEFAULT_SCHEME,
                      workers: int = 1) -> ForestModel:
    """One sample per block cell, seven spectral features, labels at the pixel level."""
    if "NDVI" not in raster.bands:
        raster = raster.with_indices()
    cells, labels, ids = [], [], []
    level = config.pixel_train_level
    for b in sorted(blocks, key=lambda b: b.id):
        c = np.asarray(b.cells, dtype=np.int64)
        if c.size == 0 or c.min() < 0 or c.max() >= raster.grid.size:
            raise StageError("train-pixel", "training block lies off the raster", f"block {b.id}")
        lab = scheme.ancestor_at(b.label, level).id
        cells.append(c)
        labels.append(np.full(c.size, lab))
        ids += [(b.id, int(i)) for i in c]
    if not cells:
        raise StageError("train-pixel", "no training blocks")
    cells = np.concatenate(cells)
    y = np.concatenate(labels)
    if len(set(y.tolist())) < 2:
        raise StageError("train-pixel", "training blocks cover fewer than two classes")
    X = raster.feature_matrix(cells)
    return train(X, y, config.forest_config("pixel"), schema=FEATURE_BANDS, sample_ids=ids, workers=workers)


def classify_pixels(model: ForestModel, raster: MultibandRaster, admin_mask: Band,
                    workers: int = 1, chunk: int = 65536) -> Band:
    """Per-cell predicted class inside the admin mask; nodata elsewhere."""
    if model.schema != FEATURE_BANDS:
        raise StageError("classify-pixels", "model was not trained on the spectral feature schema")
    if "NDVI" not in raster.bands:
        raster = raster.with_indices()
    grid = raster.grid
    out = np.full(grid.size, int(grid.nodata), dtype=np.int64)
    cells = np.flatnonzero(admin_mask.flat != 0)
    for s in range(0, cells.size, chunk):
        part = cells[s:s + chunk]
        ids, _ = model.predict(raster.feature_matrix(part), workers=workers)
        out[part] = ids
    return Band(grid, out.reshape(grid.shape))


def builtup_proportion(class_band: Band, parcel: Parcel, scheme: CategoryScheme = DEFAULT_SCHEME) -> float:
    props = class_proportions(class_band, parcel.cells)
    if not props:
        raise StageError("split", "no classified cells in parcel", f"parcel {parcel.id}")
    return sum(f for c, f in props.items() if scheme.is_builtup(c))


def split_regions(proportions: Mapping[int, float], threshold: float = BUILTUP_THRESHOLD,
                  scheme: CategoryScheme = DEFAULT_SCHEME) -> dict[int, int]:
    """Level-0 id per parcel: built-up iff the proportion is strictly above the threshold."""
    bur, nbur = scheme.bur.id, scheme.nbur.id
    return {pid: (bur if p > threshold else nbur) for pid, p in proportions.items()}


# --- fine stage -------------------------------------------------------------

def label_nonbuiltup(parcel: Parcel, class_band: Band, scheme: CategoryScheme = DEFAULT_SCHEME,
                     level: Level | str = Level.L2) -> int:
    """Most common non-built-up class at ``level``; ties go to the smallest id.

    Built-up pixel predictions are excluded. A parcel with no non-built-up
    pixels falls back to Undeveloped.
    """
    lv = Level.parse(level)
    share: dict[int, float] = {}
    counts = class_proportions(class_band, parcel.cells)
    for c, f in counts.items():
        if scheme.is_builtup(c) or scheme[c].level < lv:
            continue
        a = scheme.ancestor_at(c, lv).id
        share[a] = share.get(a, 0.0) + f
    if not share:
        return scheme.by_code("U", lv).id
    return min(share, key=lambda c: (-share[c], c))


def label_builtup(model: ForestModel, features: FeatureVector) -> tuple[int, dict[int, float]]:
    """Level-2 class from the parcel forest, plus its vote fractions."""
    return model.predict_one(features.values, features.schema)


def train_parcel_model(table: ParcelFeatureTable, samples: Sequence[ParcelTrainingSample],
                       config: PipelineConfig, workers: int = 1, stage: str = "train-parcel") -> ForestModel:
    known = set(table.parcel_ids)
    missing = [s.parcel_id for s in samples if s.parcel_id not in known]
    if missing:
        raise StageError(stage, "training sample refers to an unknown parcel", f"parcel {missing[0]}")
    samples = sorted(samples, key=lambda s: s.parcel_id)
    X = table.subset([s.parcel_id for s in samples])
    y = [s.label for s in samples]
    try:
        return train(X, y, config.forest_config("parcel"), schema=table.schema,
                     sample_ids=[s.parcel_id for s in samples], workers=workers)
    except ValueError as e:
        raise StageError(stage, str(e)) from e


# --- orchestration ----------------------------------------------------------

class Workspace:
    """Lazily computed, reusable stage outputs for one set of inputs.

    Variants that differ only in fine-stage switches (AOI on/off, threshold,
    one-stage vs two-stage) share parcels, the pixel map and density maps.
    """

    def __init__(self, inputs: CityInputs, config: PipelineConfig = PipelineConfig(), workers: int = 1):
        self.inputs = inputs
        self.config = config
        self.workers = workers
        self.timings: dict[str, float] = {}

    def _timed(self, stage, fn):
        t0 = time.perf_counter()
        try:
            return fn()
        except StageError:
            raise
        except (ValueError, KeyError, IndexError) as e:
            raise StageError(stage, str(e)) from e
        finally:
            self.timings[stage] = time.perf_counter() - t0
            log.info("stage %s done in %.2fs", stage, self.timings[stage])

    @cached_property
    def roads(self) -> list[RoadPolyline]:
        if not self.config.repair_roads:
            return list(self.inputs.roads)
        return self._timed("repair-roads", lambda: repair_topology(self.inputs.roads))

    @cached_property
    def layout(self) -> ParcelLayout:
        i = self.inputs
        return self._timed("parcels", lambda: generate_parcels(i.admin, self.roads, i.water, i.grid,
                                                               self.config.min_cells))

    @cached_property
    def pixel_model(self) -> ForestModel:
        i = self.inputs
        return self._timed("train-pixel", lambda: train_pixel_model(i.raster, i.pixel_blocks, self.config,
                                                                    i.scheme, self.workers))

    @cached_property
    def pixel_map(self) -> Band:
        return self._timed("classify-pixels", lambda: classify_pixels(
            self.pixel_model, self.inputs.raster, self.layout.admin_mask, self.workers))

    @cached_property
    def features(self) -> ParcelFeatureTable:
        i, c = self.inputs, self.config
        return self._timed("features", lambda: parcel_feature_table(
            self.layout.parcels, i.raster, i.pois, i.aois, i.scheme, level=c.feature_level,
            bandwidth=c.poi_bandwidth, include_aoi=True, workers=self.workers))

    def feature_table(self, include_aoi: bool) -> ParcelFeatureTable:
        return self.features if include_aoi else self.features.drop("AOI_")

    @cached_property
    def proportions(self) -> dict[int, float]:
        scheme = self.inputs.scheme
        return self._timed("split", lambda: {p.id: builtup_proportion(self.pixel_map, p, scheme)
                                             for p in self.layout.parcels})


def run_two_stage(inputs: CityInputs, config: PipelineConfig = PipelineConfig(), workers: int = 1,
                  workspace: Workspace | None = None) -> LandUseMap:
    ws = workspace or Workspace(inputs, config, workers)
    scheme = inputs.scheme
    parcels = ws.layout.parcels
    props = ws.proportions
    regions = split_regions(props, config.builtup_threshold, scheme)
    labels: dict[int, ParcelLabel] = {}

    pixel_level = config.pixel_train_level
    for p in parcels:
        if regions[p.id] != scheme.nbur.id:
            continue
        c = label_nonbuiltup(p, ws.pixel_map, scheme, pixel_level)
        l1 = scheme.ancestor_at(c, Level.L1).id
        l2 = c if pixel_level == Level.L2 else None
        labels[p.id] = ParcelLabel(p.id, scheme.nbur.id, l1, l2, "nbur-majority", props[p.id])

    bur_parcels = [p for p in parcels if regions[p.id] == scheme.bur.id]
    model = None
    if bur_parcels:
        table = ws.feature_table(config.include_aoi)
        samples = [s for s in inputs.parcel_samples if scheme.is_builtup(s.label)]
        model = train_parcel_model(table, samples, config, ws.workers, "train-parcel")
        ids, frac = model.predict(table.subset([p.id for p in bur_parcels]), table.schema, ws.workers)
        for p, c, fr in zip(bur_parcels, ids.tolist(), frac):
            labels[p.id] = ParcelLabel(p.id, scheme.bur.id, scheme.ancestor_at(c, Level.L1).id, c,
                                       "bur-forest", props[p.id],
                                       {k: float(v) for k, v in zip(model.classes, fr)})
    stats = {
        "parcels": len(parcels),
        "builtup_parcels": len(bur_parcels),
        "nonbuiltup_parcels": len(parcels) - len(bur_parcels),
        "pixel_training_cells": int(sum(len(b.cells) for b in inputs.pixel_blocks)),
        "parcel_training_samples": len([s for s in inputs.parcel_samples if scheme.is_builtup(s.label)]),
        "feature_schema": list(ws.feature_table(config.include_aoi).schema) if bur_parcels else [],
    }
    return LandUseMap(scheme, inputs.grid, parcels, labels, "two-stage", stats, ws.pixel_map, model)


def run_one_stage_baseline(inputs: CityInputs, config: PipelineConfig = PipelineConfig(), workers: int = 1,
                           workspace: Workspace | None = None) -> LandUseMap:
    """One parcel forest over every parcel, spectral + POI features only."""
    ws = workspace or Workspace(inputs, config, workers)
    scheme = inputs.scheme
    parcels = ws.layout.parcels
    table = ws.feature_table(include_aoi=False)
    model = train_parcel_model(table, inputs.parcel_samples, config, ws.workers, "train-baseline")
    ids, frac = model.predict(table.subset([p.id for p in parcels]), table.schema, ws.workers)
    labels = {}
    for p, c, fr in zip(parcels, ids.tolist(), frac):
        labels[p.id] = ParcelLabel(p.id, scheme.ancestor_at(c, Level.L0).id, scheme.ancestor_at(c, Level.L1).id,
                                   c, "one-stage-forest", None,
                                   {k: float(v) for k, v in zip(model.classes, fr)})
    stats = {"parcels": len(parcels), "parcel_training_samples": len(inputs.parcel_samples),
             "feature_schema": list(table.schema)}
    return LandUseMap(scheme, inputs.grid, parcels, labels, "one-stage", stats, None, model)


# --- evaluation helpers -----------------------------------------------------

def confusion_at(land_map: LandUseMap, truth: Mapping[int, int], level: Level | str) -> ConfusionMatrix:
    """Confusion matrix over the parcels in ``truth`` (parcel id -> reference class id)."""
    lv = Level.parse(level)
    scheme = land_map.scheme
    missing = [pid for pid in truth if pid not in land_map.labels]
    if missing:
        raise StageError("eval", f"{len(missing)} truth parcels have no prediction: {sorted(missing)[:10]}")
    pairs = []
    for pid in sorted(truth):
        pred = land_map.label_at(pid, lv)
        if pred is None:
            raise StageError("eval", f"no {lv.name} label available", f"parcel {pid}")
        pairs.append((pred, scheme.ancestor_at(truth[pid], lv).id))
    return build_confusion(pairs, scheme.ids_at_level(lv))


def builtup_missed(land_map: LandUseMap, truth: Mapping[int, int]) -> int:
    """Built-up truth parcels labeled with a non-built-up class."""
    scheme = land_map.scheme
    return sum(1 for pid, t in truth.items()
               if scheme.is_builtup(t) and not scheme.is_builtup(land_map.labels[pid].level1))
