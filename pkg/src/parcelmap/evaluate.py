"""Accuracy assessment: confusion matrices, OA, kappa, UA/PA, stratified sampling.

Matrix convention: rows are predicted classes and columns are reference
classes. Row totals are therefore prediction totals (user's accuracy runs along
rows) and column totals are reference totals (producer's accuracy runs down
columns).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .rng import SplitMix64

NA = "n/a"


@dataclass
class ConfusionMatrix:
    classes: list
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.classes)
        if self.counts.shape != (k, k):
            raise ValueError(f"counts must be {k}x{k}")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def permuted(self, order: Sequence[int]) -> "ConfusionMatrix":
        order = list(order)
        return ConfusionMatrix([self.classes[i] for i in order], self.counts[np.ix_(order, order)])


def build_confusion(pairs: Iterable[tuple[Hashable, Hashable]], classes: Sequence) -> ConfusionMatrix:
    """Count (predicted, reference) pairs into a matrix over ``classes``."""
    pos = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, r in pairs:
        if p not in pos or r not in pos:
            raise KeyError(f"label not in class set: {p if p not in pos else r!r}")
        counts[pos[p], pos[r]] += 1
    return ConfusionMatrix(list(classes), counts)


def _require_total(cm: ConfusionMatrix) -> int:
    if cm.total <= 0:
        raise ValueError("confusion matrix is empty")
    return cm.total


def overall_accuracy(cm: ConfusionMatrix) -> float:
    return int(np.trace(cm.counts)) / _require_total(cm)


def kappa(cm: ConfusionMatrix) -> float:
    """Cohen's kappa, (p_o - p_e) / (1 - p_e)."""
    n = _require_total(cm)
    po = int(np.trace(cm.counts)) / n
    pe = int(np.dot(cm.row_totals, cm.col_totals)) / (n * n)
    if pe == 1.0:
        return 1.0 if po == 1.0 else 0.0
    return (po - pe) / (1.0 - pe)


def user_producer_accuracy(cm: ConfusionMatrix) -> dict:
    """Per class (UA, PA); None where the row or column is empty."""
    out = {}
    rows, cols = cm.row_totals, cm.col_totals
    for i, c in enumerate(cm.classes):
        d = int(cm.counts[i, i])
        ua = d / int(rows[i]) if rows[i] else None
        pa = d / int(cols[i]) if cols[i] else None
        out[c] = (ua, pa)
    return out


def macro_producer_accuracy(cm: ConfusionMatrix, subset: Iterable | None = None) -> float | None:
    """Unweighted mean PA over classes whose PA is defined."""
    upa = user_producer_accuracy(cm)
    keys = list(subset) if subset is not None else cm.classes
    vals = [upa[c][1] for c in keys if upa[c][1] is not None]
    return sum(vals) / len(vals) if vals else None


def stratified_sample(strata: Mapping[Hashable, Hashable], counts: Mapping[Hashable, int],
                      seed: int) -> list:
    """Draw ``counts[s]`` ids uniformly without replacement from each stratum.

    ``strata`` maps id -> stratum label. Strata are visited in sorted order and
    members in sorted id order, so the draw depends only on the seed. The
    result is sorted by id.
    """
    rng = SplitMix64(seed)
    members: dict = {}
    for pid, s in strata.items():
        members.setdefault(s, []).append(pid)
    picked = []
    for s in sorted(counts, key=str):
        pool = sorted(members.get(s, []))
        k = counts[s]
        if k > len(pool):
            raise ValueError(f"stratum {s!r} has {len(pool)} members, {k} requested")
        picked += [pool[i] for i in rng.sample(len(pool), k)]
    return sorted(picked)


# --- reporting --------------------------------------------------------------

def _pct(v: float | None) -> str:
    return NA if v is None else f"{100 * v:.0f}%"


def metrics_dict(cm: ConfusionMatrix, names: Mapping | None = None) -> dict:
    names = names or {}
    upa = user_producer_accuracy(cm)
    label = [names.get(c, str(c)) for c in cm.classes]
    defined = cm.total > 0
    return {
        "classes": label,
        "class_ids": list(cm.classes),
        "layout": "rows=predicted, columns=reference",
        "counts": cm.counts.tolist(),
        "total": cm.total,
        "overall_accuracy": overall_accuracy(cm) if defined else None,
        "kappa": kappa(cm) if defined else None,
        "user_accuracy": {lab: (NA if upa[c][0] is None else upa[c][0]) for lab, c in zip(label, cm.classes)},
        "producer_accuracy": {lab: (NA if upa[c][1] is None else upa[c][1]) for lab, c in zip(label, cm.classes)},
        "macro_producer_accuracy": macro_producer_accuracy(cm) if defined else None,
    }


def format_table(cm: ConfusionMatrix, names: Mapping | None = None, title: str = "") -> str:
    """Aligned text table: class rows, Total column, UA column, PA row, OA/kappa footer."""
    names = names or {}
    label = [str(names.get(c, c)) for c in cm.classes]
    upa = user_producer_accuracy(cm)
    w0 = max([len(s) for s in label] + [len("Total"), len(title)]) + 2
    w = max([len(s) for s in label] + [6]) + 2
    head = title.ljust(w0) + "".join(s.rjust(w) for s in label) + "Total".rjust(w) + "UA".rjust(w)
    lines = [head]
    for i, c in enumerate(cm.classes):
        row = label[i].ljust(w0) + "".join(str(v).rjust(w) for v in cm.counts[i])
        row += str(int(cm.row_totals[i])).rjust(w) + _pct(upa[c][0]).rjust(w)
        lines.append(row)
    lines.append("Total".ljust(w0) + "".join(str(int(v)).rjust(w) for v in cm.col_totals)
                 + str(cm.total).rjust(w))
    lines.append("PA".ljust(w0) + "".join(_pct(upa[c][1]).rjust(w) for c in cm.classes))
    if cm.total:
        lines.append(f"OA {overall_accuracy(cm):.4f}   kappa {kappa(cm):.4f}")
    return "\n".join(lines) + "\n"


def dump_metrics(cm: ConfusionMatrix, names: Mapping | None = None) -> str:
    return json.dumps(metrics_dict(cm, names), indent=2) + "\n"
