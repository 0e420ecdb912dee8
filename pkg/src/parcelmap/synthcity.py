"""Deterministic synthetic city for desk-scale verification.

Layout: an orthogonal road grid over a square admin area, one lake block, one
dead-end road that repair should extend (splitting its block in two), and two
outlying road fragments beyond the grid that repair should trim and keep
respectively. Built-up parcels cluster around a random centre; each parcel is
painted with its own class plus strips of companion classes (vegetation in
built-up parcels, villages in non-built-up ones) so parcel-mean spectra are
mixed the way real parcels are.

Default spectral signatures (reflectance, RED GREEN BLUE NIR SWIR1) keep NDVI
high for vegetation, NDWI high for water, and every pair of class means at
least 4 noise sigmas apart.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import StageError
from .evaluate import stratified_sample
from .features import AoiFootprint, PoiPoint
from .geometry import PlanarPoint, RoadClass, RoadPolyline, SimplePolygon, repair_topology
from .parcels import ParcelLayout, generate_parcels
from .pipeline import CityInputs, ParcelTrainingSample, PixelTrainingBlock
from .raster import SPECTRAL_BANDS, Band, Grid, MultibandRaster
from .rng import derive_seed
from .scheme import CategoryScheme, DEFAULT_SCHEME, Level

DEFAULT_SIGNATURES: dict[str, tuple[float, float, float, float, float]] = {
    #        RED    GREEN  BLUE   NIR    SWIR1
    "Cro": (0.080, 0.110, 0.060, 0.300, 0.200),
    "Ore": (0.060, 0.090, 0.050, 0.370, 0.160),
    "Aqu": (0.070, 0.110, 0.100, 0.120, 0.060),
    "For": (0.030, 0.060, 0.030, 0.440, 0.130),
    "Shr": (0.050, 0.080, 0.040, 0.330, 0.240),
    "W":   (0.040, 0.060, 0.090, 0.030, 0.010),
    "U":   (0.240, 0.210, 0.170, 0.270, 0.340),
    "Vil": (0.160, 0.140, 0.120, 0.200, 0.240),
    "Com": (0.120, 0.130, 0.110, 0.230, 0.190),
    "Mar": (0.200, 0.190, 0.180, 0.230, 0.270),
    "Ser": (0.150, 0.160, 0.190, 0.180, 0.210),
    "I":   (0.260, 0.240, 0.230, 0.260, 0.300),
    "Med": (0.180, 0.170, 0.150, 0.210, 0.220),
    "Edu": (0.130, 0.150, 0.130, 0.250, 0.230),
    "Gov": (0.190, 0.160, 0.150, 0.220, 0.180),
    "Tra": (0.210, 0.200, 0.210, 0.170, 0.290),
}

# mean own-category POIs per built-up parcel
DEFAULT_POI_INTENSITY = {"Vil": 25.0, "Com": 30.0, "Mar": 40.0, "Ser": 35.0, "I": 8.0,
                         "Med": 10.0, "Edu": 12.0, "Gov": 10.0, "Tra": 6.0}
# share of a built-up parcel covered by its own-category AOI
DEFAULT_AOI_COVERAGE = {"Vil": 0.3, "Com": 0.3, "Mar": 0.25, "Ser": 0.25, "I": 0.35,
                        "Med": 0.25, "Edu": 0.3, "Gov": 0.25, "Tra": 0.35}

NBUR_PARCEL_CLASSES = ("Cro", "Ore", "Aqu", "For", "Shr", "U")
VEGETATION = ("For", "Shr", "Cro")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    size: int = 400
    cellsize: float = 10.0
    road_pitch: int = 40
    builtup_fraction: float = 0.5
    noise_sigma: float = 0.006
    noise_multiplier: float = 1.0
    signatures: Mapping[str, tuple] = field(default_factory=lambda: dict(DEFAULT_SIGNATURES))
    poi_intensity: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_POI_INTENSITY))
    poi_mix: float = 0.6
    aoi_coverage: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_AOI_COVERAGE))
    vegetation_mix: float = 0.5    # max vegetation share inside built-up parcels, over two classes
    builtup_mix: float = 0.1       # max share of a second built-up class
    village_mix: float = 0.3       # max built-up share inside non-built-up parcels
    nonbuiltup_mix: float = 0.2    # max share of a second non-built-up class
    train_per_class: int = 2
    block_size: int = 6

    def validate(self, scheme: CategoryScheme = DEFAULT_SCHEME) -> None:
        if self.size % self.road_pitch or self.size // self.road_pitch < 3:
            raise ValueError("size must be a multiple of road_pitch with at least 3 strips")
        if not 0 < self.builtup_fraction < 1:
            raise ValueError("builtup_fraction must lie in (0, 1)")
        if self.noise_sigma < 0 or self.noise_multiplier < 0:
            raise ValueError("noise must be non-negative")
        for code, cov in self.aoi_coverage.items():
            if not 0 <= cov <= 1:
                raise ValueError(f"AOI coverage for {code} must lie in [0, 1]")
            if cov > 1 - self.vegetation_mix - self.builtup_mix:
                raise ValueError(f"AOI coverage for {code} exceeds the parcel's own-class area")
        for a, a_strip, b in ((self.vegetation_mix, self.vegetation_mix / 2, self.builtup_mix),
                              (self.village_mix, self.village_mix, self.nonbuiltup_mix)):
            if not (0 <= a and 0 <= b and 1 - a - b > max(a_strip, b)):
                raise ValueError("companion strips must leave the parcel's own class in the majority")
        if self.village_mix >= 0.37 - 0.05:
            raise ValueError("village_mix must stay clear of the built-up threshold")
        missing = [c.code for c in scheme.at_level(Level.L2) if c.code not in self.signatures]
        if missing:
            raise ValueError(f"no spectral signature for {missing}")

    def separation(self) -> float:
        """Smallest pairwise distance between class signatures, in noise sigmas."""
        sig = np.array(list(self.signatures.values()))
        d = np.sqrt(((sig[:, None, :] - sig[None, :, :]) ** 2).sum(-1))
        d = d[np.triu_indices(len(sig), 1)].min()
        s = self.noise_sigma * self.noise_multiplier
        return math.inf if s == 0 else float(d / s)


@dataclass
class SynthDataset:
    config: SynthConfig
    inputs: CityInputs
    layout: ParcelLayout
    truth: dict[int, int]            # parcel id -> L2 class id
    truth_pixels: Band
    train_ids: list[int]
    validation_ids: list[int]
    expected_parcels: int
    fixtures: dict[str, str]         # road id -> expected repair outcome
    block_polygons: list = field(default_factory=list)  # (id, polygon, class id, note)

    @property
    def validation_truth(self) -> dict[int, int]:
        return {pid: self.truth[pid] for pid in self.validation_ids}


def _road_class_for(rng: np.random.Generator) -> RoadClass:
    return RoadClass(int(rng.choice([1, 2, 3], p=[0.15, 0.35, 0.5])))


def _build_roads(cfg: SynthConfig, rng: np.random.Generator, dangle_block: tuple[int, int]):
    cs, n, pitch = cfg.cellsize, cfg.size, cfg.road_pitch
    extent = n * cs
    strips = n // pitch
    roads = []
    for k in range(1, strips):
        x = (k * pitch + 0.5) * cs  # centerline through a column of cell centers
        roads.append(RoadPolyline(f"v{k:02d}", [(x, 0.0), (x, extent)], _road_class_for(rng)))
    for k in range(1, strips):
        y = (k * pitch + 0.5) * cs
        roads.append(RoadPolyline(f"h{k:02d}", [(0.0, y), (extent, y)], _road_class_for(rng)))

    # dead end short of the next road: repair extends it and splits the block
    bi, bj = dangle_block
    x0 = (bi * pitch + 0.5) * cs
    y0 = (bj * pitch + pitch // 2 + 0.5) * cs
    stub = pitch * cs - min(300.0, pitch * cs / 2)
    roads.append(RoadPolyline("x-extend", [(x0, y0), (x0 + stub, y0)], RoadClass.L3))
    # fragments beyond the grid, clear of every other road's rays
    far = extent + 2000.0
    roads.append(RoadPolyline("x-trim", [(far, far), (far + 400.0, far)], RoadClass.L3))
    roads.append(RoadPolyline("x-keep", [(far, far + 1000.0), (far + 800.0, far + 1000.0)], RoadClass.L3))
    fixtures = {"x-extend": "extended", "x-trim": "trimmed", "x-keep": "kept"}
    return roads, fixtures


def _block_rect(cfg: SynthConfig, bi: int, bj: int) -> SimplePolygon:
    """Block (bi across, bj up) bounded by road centerlines or the admin edge."""
    cs, pitch, extent = cfg.cellsize, cfg.road_pitch, cfg.size * cfg.cellsize
    strips = cfg.size // pitch
    x0 = 0.0 if bi == 0 else (bi * pitch + 0.5) * cs
    x1 = extent if bi == strips - 1 else ((bi + 1) * pitch + 0.5) * cs
    y0 = 0.0 if bj == 0 else (bj * pitch + 0.5) * cs
    y1 = extent if bj == strips - 1 else ((bj + 1) * pitch + 0.5) * cs
    return SimplePolygon.rectangle(x0, y0, x1, y1)


def _quantize(a: np.ndarray) -> np.ndarray:
    """Round-trip through the 9-significant-digit band file text format."""
    flat = a.reshape(-1).tolist()
    return np.array(["%.9g" % v for v in flat], dtype=np.float64).reshape(a.shape)


def _cell_rect(grid: Grid, r0: int, r1: int, c0: int, c1: int) -> SimplePolygon:
    """Rectangle on cell edges covering rows [r0, r1) and cols [c0, c1)."""
    cs = grid.cellsize
    return SimplePolygon.rectangle(grid.origin_x + c0 * cs, grid.origin_y + (grid.nrows - r1) * cs,
                                   grid.origin_x + c1 * cs, grid.origin_y + (grid.nrows - r0) * cs)


def generate(config: SynthConfig = SynthConfig(), scheme: CategoryScheme = DEFAULT_SCHEME) -> SynthDataset:
    cfg = config
    try:
        cfg.validate(scheme)
    except ValueError as e:
        raise StageError("synth", str(e)) from e
    rng = np.random.default_rng(derive_seed(cfg.seed, "synth-layout"))
    n, cs, pitch = cfg.size, cfg.cellsize, cfg.road_pitch
    strips = n // pitch
    grid = Grid(n, n, 0.0, 0.0, cs)
    code2 = {c.code: c.id for c in scheme.at_level(Level.L2)}

    # --- vectors and parcels
    blocks = [(i, j) for j in range(strips) for i in range(strips)]
    lake_block = blocks[int(rng.integers(len(blocks)))]
    interior = [b for b in blocks if 1 <= b[0] <= strips - 2 and b != lake_block]
    dangle_block = interior[int(rng.integers(len(interior)))]
    roads, fixtures = _build_roads(cfg, rng, dangle_block)
    admin = SimplePolygon.rectangle(0.0, 0.0, n * cs, n * cs)
    water = [_block_rect(cfg, *lake_block)]
    layout = generate_parcels(admin, repair_topology(roads), water, grid)
    expected = strips * strips - 1 + 1
    if len(layout.parcels) != expected:
        raise StageError("synth", f"generated {len(layout.parcels)} parcels, expected {expected}")
    parcels = layout.parcels

    # --- ground-truth classes: built-up parcels cluster around a centre
    centre = rng.uniform(0.3, 0.7, size=2) * n * cs
    cents = [np.mean(np.column_stack(grid.centers(p.cells)), axis=0) for p in parcels]
    dist = [float(np.hypot(*(c - centre))) for c in cents]
    order = sorted(range(len(parcels)), key=lambda i: (dist[i], parcels[i].id))
    n_bur = int(round(cfg.builtup_fraction * len(parcels)))
    bur_idx, nbur_idx = order[:n_bur], order[n_bur:]
    bur_codes = [c.code for c in scheme.descendants(scheme.bur.id, Level.L2)]

    def assign(idx, codes):
        q, rem = divmod(len(idx), len(codes))
        if q < cfg.train_per_class + 1:
            raise StageError("synth", f"too few parcels for {len(codes)} classes with "
                                      f"{cfg.train_per_class} training parcels each")
        pool = list(codes) * q + list(rng.choice(codes, size=rem, replace=False))
        rng.shuffle(pool)
        return {parcels[i].id: code2[c] for i, c in zip(idx, pool)}

    truth = assign(bur_idx, bur_codes)
    truth.update(assign(nbur_idx, list(NBUR_PARCEL_CLASSES)))
    truth = dict(sorted(truth.items()))

    # --- truth pixels: roads are transportation land, water is waterbody
    tp = np.full(grid.size, code2["Tra"], dtype=np.int64)
    tp[layout.water_mask.flat == 1] = code2["W"]
    own_region = {}  # parcel id -> (r0, r1, c0, c1) of the guaranteed own-class area
    for p in parcels:
        r, c = np.divmod(p.cells, n)
        r0, r1, c0, c1 = int(r.min()), int(r.max()) + 1, int(c.min()), int(c.max()) + 1
        h, w = r1 - r0, c1 - c0
        box = np.full((h, w), truth[p.id], dtype=np.int64)
        own = truth[p.id]
        # companion classes: horizontal bands from the top, then one column strip on the left
        if scheme.is_builtup(own):
            v = rng.uniform(0.05, cfg.vegetation_mix)
            veg = [code2[x] for x in rng.choice(VEGETATION, size=2, replace=False)]
            bands = [(v / 2, veg[0]), (v / 2, veg[1])]
            others = [code2[x] for x in bur_codes if code2[x] != own]
            f2, k2 = rng.uniform(0.0, cfg.builtup_mix), int(rng.choice(others))
        else:
            bands = [(rng.uniform(0.0, cfg.village_mix), code2["Vil"])]
            others = [code2[x] for x in NBUR_PARCEL_CLASSES if code2[x] != own]
            f2, k2 = rng.uniform(0.0, cfg.nonbuiltup_mix), int(rng.choice(others))
        top = 0
        for f, k in bands:
            rows = int(round(f * h))
            box[top:top + rows, :] = k
            top += rows
        left = int(round(f2 * w * h / max(h - top, 1)))
        left = min(left, w - cfg.block_size)
        box[top:, :left] = k2
        sub = np.zeros((n, n), dtype=bool)
        sub[r, c] = True
        mask = sub[r0:r1, c0:c1]
        tp.reshape(n, n)[r0:r1, c0:c1][mask] = box[mask]
        own_region[p.id] = (r0 + top, r1, c0 + left, c1)
    truth_pixels = Band(grid, tp.reshape(n, n))
    for p in parcels:
        vals, cnt = np.unique(tp[p.cells], return_counts=True)
        if vals[np.argmax(cnt)] != truth[p.id]:
            raise StageError("synth", "companion strips outgrew the parcel's own class", f"parcel {p.id}")

    # --- spectra
    noise_rng = np.random.default_rng(derive_seed(cfg.seed, "synth-spectra"))
    sig = np.zeros((max(code2.values()) + 1, 5))
    for code, cid in code2.items():
        sig[cid] = cfg.signatures[code]
    sigma = cfg.noise_sigma * cfg.noise_multiplier
    noise = noise_rng.standard_normal((grid.size, 5))
    spectra = np.clip(sig[tp] + sigma * noise, 0.001, 1.0)
    spectra = _quantize(spectra)
    raster = MultibandRaster(grid, {b: Band(grid, spectra[:, k].reshape(n, n))
                                    for k, b in enumerate(SPECTRAL_BANDS)})

    # --- POIs and AOIs in built-up parcels only
    poi_rng = np.random.default_rng(derive_seed(cfg.seed, "synth-poi"))
    pois: list[PoiPoint] = []
    aois: list[AoiFootprint] = []
    bur_ids = [code2[c] for c in bur_codes]
    for p in parcels:
        own = truth[p.id]
        if not scheme.is_builtup(own):
            continue
        code = scheme[own].code
        lam = cfg.poi_intensity.get(code, 0.0)
        cats = []
        if lam > 0:
            cats += [own] * max(1, int(poi_rng.poisson(lam)))
        others = [c for c in bur_ids if c != own]
        cats += [int(poi_rng.choice(others)) for _ in range(int(poi_rng.poisson(lam * cfg.poi_mix)))]
        cells = poi_rng.choice(p.cells, size=len(cats))
        xs, ys = grid.centers(cells)
        jitter = poi_rng.uniform(-0.5, 0.5, size=(len(cats), 2)) * cs
        for cat, x, y, (jx, jy) in zip(cats, xs, ys, jitter):
            pois.append(PoiPoint(len(pois) + 1, PlanarPoint(round(float(x + jx), 3), round(float(y + jy), 3)), cat))

        cov = cfg.aoi_coverage.get(code, 0.0)
        if cov > 0:
            r0, r1, c0, c1 = own_region[p.id]
            target = cov * float(poi_rng.uniform(0.75, 1.25)) * p.n_cells
            rows = min(r1 - r0, max(1, int(round(target / (c1 - c0)))))
            aois.append(AoiFootprint(len(aois) + 1, _cell_rect(grid, r1 - rows, r1, c0, c1), own))

    # --- training samples: stratified by class, disjoint from validation
    train_ids = stratified_sample(truth, {c: cfg.train_per_class for c in sorted(set(truth.values()))},
                                  derive_seed(cfg.seed, "synth-train"))
    validation_ids = [pid for pid in truth if pid not in set(train_ids)]
    samples = [ParcelTrainingSample(pid, truth[pid]) for pid in train_ids]
    bs = cfg.block_size
    polys = []
    for pid in train_ids:
        r0, r1, c0, c1 = own_region[pid]
        polys.append((len(polys) + 1, _cell_rect(grid, r1 - bs, r1, c1 - bs, c1), truth[pid], f"parcel {pid}"))
    lr, lc = np.nonzero(layout.water_mask.values)
    lr0, lc0 = int(lr.min()) + 2, int(lc.min()) + 2
    for k in range(2):
        poly = _cell_rect(grid, lr0 + k * (bs + 2), lr0 + k * (bs + 2) + bs, lc0, lc0 + bs)
        polys.append((len(polys) + 1, poly, code2["W"], "lake"))
    pixel_blocks = [PixelTrainingBlock.from_polygon(i, poly, lab, grid, note) for i, poly, lab, note in polys]

    inputs = CityInputs(grid, raster, [admin], roads, water, pois, aois, pixel_blocks, samples, scheme)
    return SynthDataset(cfg, inputs, layout, truth, truth_pixels, train_ids, validation_ids, expected, fixtures,
                        polys)


def difficulty_sweep(base: SynthConfig, multipliers: Sequence[float],
                     scheme: CategoryScheme = DEFAULT_SCHEME) -> list[SynthDataset]:
    """Datasets identical except for the spectral noise scale."""
    if any(m < 0 for m in multipliers):
        raise ValueError("multipliers must be non-negative")
    return [generate(replace(base, noise_multiplier=float(m)), scheme) for m in multipliers]


def aoi_dominant_config(seed: int = 7, scheme: CategoryScheme = DEFAULT_SCHEME, **overrides) -> SynthConfig:
    """Preset where AOI footprints carry most of the built-up class signal.

    Built-up classes share one spectral signature, companion strips are thin
    and there are no POIs, so only AOI coverage tells the built-up subclasses
    apart.
    """
    bur = {c.code for c in scheme.descendants(scheme.bur.id, Level.L2)}
    common = tuple(np.mean([DEFAULT_SIGNATURES[c] for c in sorted(bur)], axis=0).round(3).tolist())
    sigs = {c: (common if c in bur else v) for c, v in DEFAULT_SIGNATURES.items()}
    kw = dict(seed=seed, signatures=sigs,
              poi_intensity={c: 0.0 for c in DEFAULT_POI_INTENSITY},
              vegetation_mix=0.06, builtup_mix=0.0,
              aoi_coverage={c: 0.6 for c in DEFAULT_AOI_COVERAGE},
              road_pitch=25, train_per_class=6, block_size=3)
    kw.update(overrides)
    return SynthConfig(**kw)


def write_dataset(ds: SynthDataset, directory) -> Path:
    """Write every layer in the pipeline's input formats plus ground truth and a hashed manifest."""
    from . import io as pio
    from .raster import write_band, write_raster

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    inp, scheme = ds.inputs, ds.inputs.scheme
    L = pio.DATASET_LAYERS
    write_raster(d / Path(L["raster"]).parent, {b: inp.raster[b] for b in SPECTRAL_BANDS},
                 Path(L["raster"]).name)
    pio.write_polygons(d / L["admin"], inp.admin)
    pio.write_roads(d / L["roads"], inp.roads)
    pio.write_polygons(d / L["water"], inp.water)
    pio.write_pois(d / L["pois"], inp.pois, scheme)
    pio.write_aois(d / L["aois"], inp.aois, scheme)
    pio.write_pixel_blocks(d / L["pixel_blocks"], ds.block_polygons, scheme)
    pio.write_parcel_samples(d / L["parcel_samples"], inp.parcel_samples, scheme)
    splits = {pid: "train" for pid in ds.train_ids}
    splits.update({pid: "validation" for pid in ds.validation_ids})
    pio.write_truth(d / L["truth"], ds.truth, splits, scheme)
    (d / L["scheme"]).write_text(scheme.to_json())
    write_band(d / "truth_pixels.asc", ds.truth_pixels)
    cfg = asdict(ds.config)
    cfg["signatures"] = {k: list(v) for k, v in ds.config.signatures.items()}
    pio.dump_json(d / "ground_truth.json", {
        "config": cfg,
        "expected_parcels": ds.expected_parcels,
        "repair_fixtures": ds.fixtures,
        "train_parcels": ds.train_ids,
        "validation_parcels": ds.validation_ids,
        "signature_separation_sigmas": ds.config.separation(),
    })
    return pio.write_manifest(d, extra={"format": "parcelmap-synth/1", "seed": ds.config.seed})
