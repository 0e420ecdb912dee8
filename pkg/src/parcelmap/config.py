"""Run configuration: one TOML file plus command-line overrides (flags win).

Example::

    seed = 7

    [inputs]
    data = "city/"             # dataset directory with conventional layer names
    roads = "other_roads.geojson"  # any single layer may be overridden

    [pipeline]
    builtup_threshold = 0.37
    include_aoi = true

    [pipeline.parcel_forest]
    n_trees = 200

    [synth]
    noise_multiplier = 2.0

Relative paths are resolved against the directory holding the TOML file.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import InputError
from .forest import TrainConfig
from .io import DATASET_LAYERS, dataset_paths
from .pipeline import PipelineConfig
from .synthcity import SynthConfig

_TOP_KEYS = {"seed", "inputs", "pipeline", "synth", "verbosity"}
_INPUT_KEYS = set(DATASET_LAYERS) | {"data"}


def load_toml(path: str | Path) -> dict:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except OSError as e:
        raise InputError(str(e), str(path)) from e
    except tomllib.TOMLDecodeError as e:
        raise InputError(f"invalid TOML ({e})", str(path)) from e
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise InputError(f"unknown top-level keys {sorted(unknown)}", str(path))
    inputs = doc.get("inputs", {})
    bad = set(inputs) - _INPUT_KEYS
    if bad:
        raise InputError(f"unknown input layers {sorted(bad)}", str(path))
    doc["inputs"] = {k: str((path.parent / v).resolve()) if not Path(v).is_absolute() else v
                     for k, v in inputs.items()}
    return doc


def _build(cls, values: Mapping[str, Any], where: str):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise InputError(f"unknown {where} keys {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise InputError(f"bad {where} setting ({e})") from e


def pipeline_config(doc: Mapping | None = None, **overrides) -> PipelineConfig:
    """PipelineConfig from a config document with keyword overrides (None means unset)."""
    doc = dict(doc or {})
    sect = dict(doc.get("pipeline", {}))
    for which in ("pixel_forest", "parcel_forest"):
        sect[which] = _build(TrainConfig, sect.get(which, {}), f"pipeline.{which}")
    if "seed" in doc:
        sect.setdefault("seed", doc["seed"])
    cfg = _build(PipelineConfig, sect, "pipeline")
    trees = overrides.pop("n_trees", None)
    if trees is not None:
        cfg = replace(cfg, pixel_forest=replace(cfg.pixel_forest, n_trees=trees),
                      parcel_forest=replace(cfg.parcel_forest, n_trees=trees))
    set_ = {k: v for k, v in overrides.items() if v is not None}
    try:
        return replace(cfg, **set_)
    except (TypeError, ValueError) as e:
        raise InputError(f"bad pipeline override ({e})") from e


def synth_config(doc: Mapping | None = None, **overrides) -> SynthConfig:
    doc = dict(doc or {})
    sect = dict(doc.get("synth", {}))
    if "seed" in doc:
        sect.setdefault("seed", doc["seed"])
    if "signatures" in sect:
        sect["signatures"] = {k: tuple(v) for k, v in sect["signatures"].items()}
    sect.update({k: v for k, v in overrides.items() if v is not None})
    return _build(SynthConfig, sect, "synth")


def input_paths(doc: Mapping | None = None, data: str | Path | None = None,
                **flags: str | Path | None) -> dict[str, Path | None]:
    """Layer paths: dataset directory first, then config entries, then flags."""
    doc_inputs = dict((doc or {}).get("inputs", {}))
    base = data or doc_inputs.pop("data", None)
    doc_inputs.pop("data", None)
    paths: dict[str, Path | None] = dataset_paths(base) if base else {k: None for k in DATASET_LAYERS}
    for k, v in doc_inputs.items():
        paths[k] = Path(v)
    for k, v in flags.items():
        if v is not None:
            paths[k] = Path(v)
    return paths


@dataclass
class RunConfig:
    inputs: dict[str, Path | None]
    out: Path
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    verbosity: int = 0

    def report_dict(self) -> dict:
        """Effective configuration echoed in run reports (paths as given, defaults resolved)."""
        return {
            "inputs": {k: (str(v) if v is not None else None) for k, v in sorted(self.inputs.items())},
            "pipeline": self.pipeline.to_dict(),
        }
