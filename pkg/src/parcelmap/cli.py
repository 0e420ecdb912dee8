"""``parcelmap`` command line.

Exit codes: 0 success, 2 usage error, 3 unreadable or inconsistent input,
4 pipeline stage failure.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import __version__
from . import io as pio
from .config import RunConfig, input_paths, load_toml, pipeline_config, synth_config
from .errors import InputError, StageError
from .evaluate import build_confusion, format_table, metrics_dict
from .features import feature_group
from .forest import ForestError, ForestModel, feature_importance
from .geometry import repair_topology
from .parcels import generate_parcels
from .pipeline import (LandUseMap, Workspace, confusion_at, run_one_stage_baseline,
                       run_two_stage, train_parcel_model)
from .raster import write_band, write_raster
from .scheme import DEFAULT_SCHEME, Level

EXIT_INPUT = 3
EXIT_STAGE = 4
log = logging.getLogger("parcelmap")


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except InputError as e:
            click.echo(f"input error: {e}", err=True)
            ctx.exit(EXIT_INPUT)
        except (StageError, ForestError) as e:
            click.echo(f"pipeline error: {e}", err=True)
            ctx.exit(EXIT_STAGE)


@click.group(cls=_Group)
@click.version_option(__version__, prog_name="parcelmap")
@click.option("-v", "--verbose", count=True, help="Log stage progress (-vv for debug).")
def cli(verbose: int):
    """Parcel-level urban land-use mapping."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


# --- shared options -----------------------------------------------------------

_LAYER_FLAGS = [("raster", "Raster manifest (JSON)"), ("admin", "Admin boundary GeoJSON"),
                ("roads", "Road network GeoJSON"), ("water", "Water polygons GeoJSON"),
                ("pois", "POI GeoJSON"), ("aois", "AOI GeoJSON"), ("pixel_blocks", "Pixel training blocks GeoJSON"),
                ("parcel_samples", "Parcel training CSV"), ("scheme", "Category scheme JSON")]


def input_options(fn):
    @click.option("--config", "config_path", type=click.Path(dir_okay=False), help="TOML run configuration.")
    @click.option("--data", type=click.Path(file_okay=False), help="Dataset directory with conventional layer names.")
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        return fn(*args, **kwargs)

    for name, help_ in reversed(_LAYER_FLAGS):
        wrapper = click.option(f"--{name.replace('_', '-')}", name, type=click.Path(dir_okay=False),
                               help=help_ + ".")(wrapper)
    return wrapper


def pipeline_options(fn):
    fn = click.option("--seed", type=int, help="Top-level seed; every stage seed derives from it.")(fn)
    fn = click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True,
                      help="Worker threads; outputs do not depend on it.")(fn)
    fn = click.option("--trees", type=click.IntRange(min=1), help="Trees per forest.")(fn)
    fn = click.option("--threshold", type=float, help="Built-up proportion threshold.")(fn)
    fn = click.option("--no-aoi", is_flag=True, help="Drop AOI features (ablation).")(fn)
    return fn


def _resolve(kw) -> RunConfig:
    doc = load_toml(kw["config_path"]) if kw.get("config_path") else {}
    layers = {name: kw.get(name) for name, _ in _LAYER_FLAGS}
    paths = input_paths(doc, kw.get("data"), **layers)
    pcfg = pipeline_config(doc, seed=kw.get("seed"), builtup_threshold=kw.get("threshold"),
                           n_trees=kw.get("trees"), include_aoi=False if kw.get("no_aoi") else None)
    return RunConfig(paths, Path(kw["out"]) if kw.get("out") else Path("."), pcfg)


def _inputs(rc: RunConfig):
    return pio.load_city_inputs(rc.inputs)


def _names(scheme):
    return {c.id: c.code for c in scheme.classes}


# --- synth --------------------------------------------------------------------

@cli.command()
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output dataset directory.")
@click.option("--seed", type=int, help="Generator seed.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="TOML with a [synth] table.")
@click.option("--noise-multiplier", type=float, help="Scale on the spectral noise sigma.")
@click.option("--preset", type=click.Choice(["default", "aoi-dominant"]), default="default", show_default=True)
def synth(out, seed, config_path, noise_multiplier, preset):
    """Generate a synthetic city dataset."""
    from .synthcity import aoi_dominant_config, generate, write_dataset

    doc = load_toml(config_path) if config_path else {}
    if preset == "aoi-dominant":
        base = aoi_dominant_config()
        cfg = replace(base, **{k: v for k, v in {"seed": seed if seed is not None else doc.get("seed"),
                                                  "noise_multiplier": noise_multiplier}.items() if v is not None})
    else:
        cfg = synth_config(doc, seed=seed, noise_multiplier=noise_multiplier)
    ds = generate(cfg)
    manifest = write_dataset(ds, out)
    click.echo(f"wrote {manifest} ({len(ds.layout.parcels)} parcels, {len(ds.inputs.pois)} POIs, "
               f"{len(ds.inputs.aois)} AOIs)")


# --- individual stages --------------------------------------------------------------

@cli.command()
@input_options
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--no-repair", is_flag=True, help="Use roads as given.")
def parcels(out, no_repair, **kw):
    """Repair roads and cut the admin area into parcels."""
    rc = _resolve(kw)
    inp = _inputs(rc)
    roads = list(inp.roads) if no_repair else repair_topology(inp.roads)
    layout = generate_parcels(inp.admin, roads, inp.water, inp.grid)
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    pio.write_roads(d / "roads_repaired.geojson", roads)
    pio.write_geojson(d / "parcels.geojson", [
        {"type": "Feature", "properties": {"parcel_id": p.id, "cells": p.n_cells, "area": p.area},
         "geometry": pio.polygon_geometry(p.outline)} for p in layout.parcels])
    write_band(d / "parcel_ids.asc", layout.labels)
    click.echo(f"{len(layout.parcels)} parcels")


@cli.command()
@input_options
@pipeline_options
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Feature CSV.")
def features(out, workers, **kw):
    """Per-parcel spectral, POI-density and AOI-proportion features."""
    rc = _resolve(kw)
    ws = Workspace(_inputs(rc), rc.pipeline, workers)
    table = ws.feature_table(rc.pipeline.include_aoi)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    pio.write_feature_table(out, table)
    click.echo(f"{len(table.parcel_ids)} parcels x {len(table.schema)} features")


@cli.command("train-pixel")
@input_options
@pipeline_options
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Model JSON.")
def train_pixel(out, workers, **kw):
    """Train the pixel forest on the training blocks."""
    rc = _resolve(kw)
    ws = Workspace(_inputs(rc), rc.pipeline, workers)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    ws.pixel_model.save(out)
    click.echo(f"pixel forest: {len(ws.pixel_model.trees)} trees, classes {ws.pixel_model.classes}")


@cli.command("train-parcel")
@input_options
@pipeline_options
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Model JSON.")
@click.option("--all-samples", is_flag=True, help="Train on every sample (one-stage model), not only built-up.")
def train_parcel(out, workers, all_samples, **kw):
    """Train the parcel forest on labeled training parcels."""
    rc = _resolve(kw)
    inp = _inputs(rc)
    ws = Workspace(inp, rc.pipeline, workers)
    samples = inp.parcel_samples
    include_aoi = rc.pipeline.include_aoi and not all_samples
    if not all_samples:
        samples = [s for s in samples if inp.scheme.is_builtup(s.label)]
    if not samples:
        raise StageError("train-parcel", "no training parcels")
    model = train_parcel_model(ws.feature_table(include_aoi), samples, rc.pipeline, workers)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    click.echo(f"parcel forest: {len(model.trees)} trees on {len(samples)} parcels")


# --- run ----------------------------------------------------------------------

def _importance_rows(model: ForestModel):
    imp = feature_importance(model)
    groups: dict[str, float] = {}
    for k, v in imp.items():
        groups[feature_group(k)] = groups.get(feature_group(k), 0.0) + v
    return imp, groups


def _write_importance(path: Path, model: ForestModel) -> dict:
    imp, groups = _importance_rows(model)
    lines = ["feature,group,importance"]
    lines += [f"{k},{feature_group(k)},{v!r}" for k, v in imp.items()]
    path.write_text("\n".join(lines) + "\n")
    return groups


def _evaluate(land_map: LandUseMap, truth: dict[int, int], out: Path, figures: bool) -> dict:
    from .plotting import render_confusion

    scheme = land_map.scheme
    names = _names(scheme)
    result = {}
    for lv in Level:
        if any(land_map.label_at(pid, lv) is None for pid in truth):
            continue
        if any(scheme[t].level < lv for t in truth.values()):
            continue
        cm = confusion_at(land_map, truth, lv)
        (out / f"confusion_{lv.name}.json").write_text(json.dumps(metrics_dict(cm, names), indent=2) + "\n")
        (out / f"confusion_{lv.name}.txt").write_text(format_table(cm, names, lv.name))
        if figures:
            render_confusion(cm, out / "figures" / f"confusion_{lv.name}.png", names,
                             f"{land_map.method}, {lv.name}")
        m = metrics_dict(cm, names)
        result[lv.name] = {k: m[k] for k in ("total", "overall_accuracy", "kappa", "macro_producer_accuracy")}
    return result


@cli.command()
@input_options
@pipeline_options
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--baseline", is_flag=True, help="One-stage forest over all parcels instead of the two-stage method.")
@click.option("--truth", type=click.Path(dir_okay=False), help="Reference labels CSV (defaults to the dataset's).")
@click.option("--split", default="validation", show_default=True,
              help="Evaluate on truth rows with this split value ('all' for every row).")
@click.option("--figures/--no-figures", default=True, show_default=True, help="Render PNG maps and matrices.")
@click.option("--timings", is_flag=True, help="Also write per-stage wall-clock timings (not reproducible).")
def run(out, workers, baseline, truth, split, figures, timings, **kw):
    """Run the full mapping pipeline and write map, rasters and report."""
    rc = _resolve(kw)
    inp = _inputs(rc)
    ws = Workspace(inp, rc.pipeline, workers)
    land_map = (run_one_stage_baseline if baseline else run_two_stage)(inp, rc.pipeline, workspace=ws)

    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    if figures:
        (d / "figures").mkdir(exist_ok=True)
    pio.write_map(d / "map.geojson", land_map)
    pio.write_labels(d / "labels.csv", land_map)
    write_raster(d / "classes", {lv.name: land_map.class_band(lv) for lv in Level})
    if land_map.pixel_map is not None:
        write_band(d / "pixel_classes.asc", land_map.pixel_map)
    report = {
        "method": land_map.method,
        "config": rc.report_dict(),
        "stats": land_map.stats,
        "label_counts": {lv.name: _label_counts(land_map, lv) for lv in Level},
    }
    if land_map.model is not None:
        land_map.model.save(d / "parcel_model.json")
        report["importance_groups"] = _write_importance(d / "importance.csv", land_map.model)
    if figures:
        from .plotting import render_map
        for lv in (Level.L1, Level.L2):
            render_map(land_map, lv, d / "figures" / f"map_{lv.name}.png")

    truth_path = truth or rc.inputs.get("truth")
    if truth_path:
        ref = pio.read_truth(truth_path, inp.scheme, None if split == "all" else split)
        if not ref:
            raise InputError(f"no truth rows with split '{split}'", str(truth_path))
        report["truth"] = {"path": str(truth_path), "split": split, "parcels": len(ref)}
        report["metrics"] = _evaluate(land_map, ref, d, figures)
    pio.dump_json(d / "report.json", report)
    if timings:
        pio.dump_json(d / "timings.json", ws.timings)
    summary = ", ".join(f"{k} OA {v['overall_accuracy']:.3f}" for k, v in report.get("metrics", {}).items())
    click.echo(f"{land_map.method}: {len(land_map.parcels)} parcels -> {d}" + (f" ({summary})" if summary else ""))


def _label_counts(land_map: LandUseMap, lv: Level) -> dict[str, int]:
    counts: dict[str, int] = {}
    for pid in sorted(land_map.labels):
        c = land_map.label_at(pid, lv)
        if c is not None:
            code = land_map.scheme[c].code
            counts[code] = counts.get(code, 0) + 1
    return dict(sorted(counts.items()))


# --- eval / importance / scheme ----------------------------------------------------

@cli.command("eval")
@click.argument("predicted", type=click.Path(dir_okay=False))
@click.argument("truth", type=click.Path(dir_okay=False))
@click.option("--level", type=click.Choice(["L0", "L1", "L2"]), default="L2", show_default=True)
@click.option("--split", default="validation", show_default=True, help="Truth split to use ('all' for every row).")
@click.option("--scheme", type=click.Path(dir_okay=False), help="Category scheme JSON.")
@click.option("--out", type=click.Path(file_okay=False), help="Write metrics JSON and text table here.")
def eval_cmd(predicted, truth, level, split, scheme, out):
    """Confusion matrix, OA, kappa, UA and PA of a predicted map against reference labels."""
    sch = pio.load_scheme(scheme)
    lv = Level.parse(level)
    pred = pio.read_labels(predicted, sch)
    ref = pio.read_truth(truth, sch, None if split == "all" else split)
    missing = sorted(pid for pid in ref if pid not in pred or lv not in pred[pid])
    if missing:
        raise InputError(f"{len(missing)} reference parcels lack a {lv.name} prediction; "
                         f"first ids: {missing[:10]}", predicted)
    if not ref:
        raise InputError("no reference rows", truth)
    try:
        pairs = [(pred[pid][lv], sch.ancestor_at(ref[pid], lv).id) for pid in sorted(ref)]
    except Exception as e:
        raise InputError(f"reference labels are coarser than {lv.name} ({e})", truth) from e
    cm = build_confusion(pairs, sch.ids_at_level(lv))
    names = _names(sch)
    text = format_table(cm, names, lv.name)
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"metrics_{lv.name}.json").write_text(json.dumps(metrics_dict(cm, names), indent=2) + "\n")
        (d / f"confusion_{lv.name}.txt").write_text(text)
    click.echo(text, nl=False)


@cli.command()
@click.argument("model", type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), help="Write per-feature importance CSV.")
def importance(model, out):
    """Mean-decrease-in-impurity feature importance of a saved forest."""
    try:
        m = ForestModel.load(model)
    except (OSError, ValueError, KeyError) as e:
        raise InputError(f"cannot load model ({e})", model) from e
    imp, groups = _importance_rows(m)
    if out:
        _write_importance(Path(out), m)
    for k, v in sorted(imp.items(), key=lambda kv: (-kv[1], kv[0])):
        click.echo(f"{k:<12} {v:.4f}")
    click.echo("groups: " + ", ".join(f"{g} {v:.4f}" for g, v in sorted(groups.items(), key=lambda kv: -kv[1])))


@cli.command()
@click.option("--out", type=click.Path(dir_okay=False), help="Write to a file instead of stdout.")
def scheme(out):
    """Print the default three-level category scheme as JSON."""
    text = DEFAULT_SCHEME.to_json()
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


def main(argv=None):
    cli.main(args=argv, prog_name="parcelmap")


if __name__ == "__main__":
    main()
