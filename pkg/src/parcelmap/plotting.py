"""PNG figures for run reports: class maps and confusion matrices."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402

from .evaluate import ConfusionMatrix, overall_accuracy, kappa  # noqa: E402
from .pipeline import LandUseMap  # noqa: E402
from .scheme import Level  # noqa: E402

PALETTE = {
    "NBUR": "#7fbf7b", "BUR": "#d6604d",
    "A": "#c2e699", "Cro": "#d9f0a3", "Ore": "#addd8e", "Aqu": "#80cdc1",
    "G": "#31a354", "For": "#006837", "Shr": "#78c679",
    "W": "#4393c3", "U": "#d9d9d9",
    "R": "#fdae61", "Vil": "#fee08b", "Com": "#f46d43",
    "C": "#e7298a", "Mar": "#c51b7d", "Ser": "#f1b6da",
    "I": "#8c510a",
    "P": "#6a51a3", "Med": "#9e9ac8", "Edu": "#54278f", "Gov": "#bcbddc", "Tra": "#525252",
}
_FALLBACK = plt.get_cmap("tab20")
_PNG_META = {"Software": None}


def _color(code: str, i: int) -> str:
    return PALETTE.get(code) or matplotlib.colors.to_hex(_FALLBACK(i % 20))


def render_map(land_map: LandUseMap, level: Level | str, path: str | Path, title: str = "") -> Path:
    """Parcel class map at ``level``; roads, water and unlabeled cells stay white."""
    lv = Level.parse(level)
    band = land_map.class_band(lv)
    scheme = land_map.scheme
    ids = scheme.ids_at_level(lv)
    index = np.full(band.values.shape, -1, dtype=np.int64)
    for k, cid in enumerate(ids):
        index[band.values == cid] = k
    colors = [_color(scheme[c].code, k) for k, c in enumerate(ids)]
    cmap = ListedColormap(colors)
    cmap.set_under("white")

    g = land_map.grid
    x0, y0, x1, y1 = g.extent
    fig, ax = plt.subplots(figsize=(7, 6), dpi=100)
    ax.imshow(np.ma.masked_less(index, 0), cmap=cmap, vmin=0, vmax=max(len(ids) - 1, 1),
              extent=(x0, x1, y0, y1), interpolation="nearest", origin="upper")
    present = sorted(set(index[index >= 0].tolist()))
    ax.legend(handles=[Patch(color=colors[k], label=scheme[ids[k]].name) for k in present],
              loc="upper left", bbox_to_anchor=(1.01, 1.0), fontsize=7, frameon=False)
    ax.set_title(title or f"{land_map.method} map, {lv.name}")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path


def render_confusion(cm: ConfusionMatrix, path: str | Path, names: Mapping | None = None,
                     title: str = "") -> Path:
    """Heat map of counts with predicted classes on rows and reference on columns."""
    names = names or {}
    labels = [str(names.get(c, c)) for c in cm.classes]
    k = len(labels)
    size = 2.5 + 0.45 * k
    fig, ax = plt.subplots(figsize=(size, size), dpi=100)
    counts = cm.counts
    ax.imshow(counts, cmap="Blues", vmin=0, vmax=max(int(counts.max()), 1))
    for i in range(k):
        for j in range(k):
            if counts[i, j]:
                dark = counts[i, j] > counts.max() / 2
                ax.text(j, i, str(int(counts[i, j])), ha="center", va="center", fontsize=8,
                        color="white" if dark else "black")
    ax.set_xticks(range(k), labels, rotation=90, fontsize=8)
    ax.set_yticks(range(k), labels, fontsize=8)
    ax.set_xlabel("reference")
    ax.set_ylabel("predicted")
    foot = f"OA {overall_accuracy(cm):.3f}, kappa {kappa(cm):.3f}" if cm.total else "no samples"
    ax.set_title(f"{title}\n{foot}" if title else foot, fontsize=9)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path
