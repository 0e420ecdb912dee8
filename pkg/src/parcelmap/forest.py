"""Deterministic random forest: CART trees on Gini, bootstrap bagging, majority vote.

Every tree draws its bootstrap sample and per-node feature subsets from its
own SplitMix64 stream seeded with ``derive_seed(seed, "tree", t)``, so a model
depends only on (samples, config) and not on how many workers built it.

Split rule: for each sampled feature, candidate thresholds are midpoints of
consecutive distinct sorted values; ``x < threshold`` goes left. The split
minimizing the weighted child Gini wins, ties resolved by lower feature index
then lower threshold. Near-ties in floating point are re-scored exactly with
rational arithmetic so the choice never depends on rounding.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import SplitMix64, derive_seed

FORMAT = "parcelmap-forest/1"


class ForestError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 100
    mtry: int | None = None  # None -> floor(sqrt(F))
    min_leaf: int = 1
    max_depth: int | None = None
    seed: int = 0
    bootstrap: bool = True  # False grows every tree on the full training set

    def resolved_mtry(self, n_features: int) -> int:
        m = self.mtry if self.mtry is not None else max(1, math.isqrt(n_features))
        if not 1 <= m <= n_features:
            raise ForestError(f"mtry={m} outside [1, {n_features}]")
        return m


def gini_impurity(counts: Sequence[float]) -> float:
    """1 - sum (n_c / N)^2."""
    counts = np.asarray(counts, dtype=np.float64)
    if (counts < 0).any():
        raise ValueError("class counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise ValueError("gini of an empty node is undefined")
    p = counts / total
    return float(1.0 - np.dot(p, p))


@dataclass
class DecisionTree:
    feature: np.ndarray    # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray     # (n_nodes, n_classes) bootstrap class counts

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def leaf_class_index(self) -> np.ndarray:
        # argmax takes the first maximum: ties go to the smallest class id
        return np.argmax(self.counts, axis=1)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf node index reached by each row of X."""
        node = np.zeros(len(X), dtype=np.int64)
        active = np.arange(len(X))
        while active.size:
            f = self.feature[node[active]]
            split = f >= 0
            active = active[split]
            if not active.size:
                break
            nd = node[active]
            go_left = X[active, self.feature[nd]] < self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
        return node

    def predict_index(self, X: np.ndarray) -> np.ndarray:
        return self.leaf_class_index()[self.apply(X)]

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(np.asarray(d["feature"], dtype=np.int64), np.asarray(d["threshold"], dtype=np.float64),
                   np.asarray(d["left"], dtype=np.int64), np.asarray(d["right"], dtype=np.int64),
                   np.asarray(d["counts"], dtype=np.int64))

    def __eq__(self, other):
        return isinstance(other, DecisionTree) and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("feature", "threshold", "left", "right", "counts"))


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    classes: list[int]
    schema: tuple[str, ...]
    config: TrainConfig = field(default_factory=TrainConfig)

    @property
    def n_features(self) -> int:
        return len(self.schema)

    def _check(self, X: np.ndarray, schema: Sequence[str] | None) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if schema is not None and tuple(schema) != self.schema:
            raise ForestError("feature schema does not match the model")
        if X.shape[1] != self.n_features:
            raise ForestError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def vote_fractions(self, X: np.ndarray, schema: Sequence[str] | None = None,
                       workers: int = 1) -> np.ndarray:
        """(n, n_classes) share of trees voting for each class."""
        X = self._check(X, schema)
        with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
            per_tree = list(ex.map(lambda t: t.predict_index(X), self.trees))
        votes = np.zeros((len(X), len(self.classes)), dtype=np.int64)
        rows = np.arange(len(X))
        for pred in per_tree:  # fixed tree order
            votes[rows, pred] += 1
        return votes / len(self.trees)

    def predict(self, X: np.ndarray, schema: Sequence[str] | None = None,
                workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Class ids and vote fractions; forest ties go to the smallest class id."""
        frac = self.vote_fractions(X, schema, workers)
        return np.asarray(self.classes, dtype=np.int64)[np.argmax(frac, axis=1)], frac

    def predict_one(self, x: Sequence[float], schema: Sequence[str] | None = None) -> tuple[int, dict[int, float]]:
        ids, frac = self.predict(np.asarray(x, dtype=np.float64)[None, :], schema)
        return int(ids[0]), {c: float(f) for c, f in zip(self.classes, frac[0])}

    # serialization

    def to_dict(self) -> dict:
        return {"format": FORMAT, "classes": list(self.classes), "schema": list(self.schema),
                "config": asdict(self.config), "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, doc: dict) -> "ForestModel":
        if doc.get("format") != FORMAT:
            raise ForestError(f"unsupported model format {doc.get('format')!r}")
        return cls([DecisionTree.from_dict(t) for t in doc["trees"]], [int(c) for c in doc["classes"]],
                   tuple(doc["schema"]), TrainConfig(**doc["config"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ForestModel":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __eq__(self, other):
        return (isinstance(other, ForestModel) and self.classes == other.classes
                and self.schema == other.schema and self.config == other.config
                and len(self.trees) == len(other.trees)
                and all(a == b for a, b in zip(self.trees, other.trees)))


# --- training ---------------------------------------------------------------

def _best_split(Xn: np.ndarray, yn: np.ndarray, feats: Sequence[int], n_classes: int,
                min_leaf: int):
    """(feature, threshold) maximizing sum_L n_c^2/n_L + sum_R n_c^2/n_R, or None.

    Maximizing that score is the same as minimizing weighted child Gini.
    """
    m = len(yn)
    nl = np.arange(1, m, dtype=np.float64)
    nr = m - nl
    size_ok = (nl >= min_leaf) & (nr >= min_leaf)
    per_feature = []
    top = -np.inf
    for f in sorted(feats):
        v = Xn[:, f]
        order = np.argsort(v, kind="stable")
        vs, ys = v[order], yn[order]
        valid = (vs[:-1] < vs[1:]) & size_ok
        if not valid.any():
            continue
        onehot = np.zeros((m, n_classes))
        onehot[np.arange(m), ys] = 1.0
        L = np.cumsum(onehot, axis=0)[:-1]
        R = L[-1] + onehot[-1] - L
        score = (L * L).sum(axis=1) / nl + (R * R).sum(axis=1) / nr
        score[~valid] = -np.inf
        per_feature.append((f, vs, L, R, score))
        top = max(top, score.max())
    if not per_feature:
        return None

    tol = 1e-9 * abs(top)
    cands = []
    for f, vs, L, R, score in per_feature:
        for i in np.flatnonzero(score >= top - tol):
            lo, hi = vs[i], vs[i + 1]
            thr = (lo + hi) / 2.0
            if not lo < thr:  # midpoint rounded onto the lower value
                thr = hi
            li = L[i].astype(np.int64)
            ri = R[i].astype(np.int64)
            exact = Fraction(int((li * li).sum()), int(li.sum())) + Fraction(int((ri * ri).sum()), int(ri.sum()))
            cands.append((-exact, f, thr))
    _, f, thr = min(cands)
    return f, float(thr)


def _grow(X: np.ndarray, y: np.ndarray, n_classes: int, sample: np.ndarray, mtry: int,
          min_leaf: int, max_depth: int | None, rng: SplitMix64) -> DecisionTree:
    F = X.shape[1]
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y[idx], minlength=n_classes))
        return len(feature) - 1

    root = new_node(sample)
    stack = [(root, sample, 0)]
    while stack:
        node, idx, depth = stack.pop()
        c = counts[node]
        if (np.count_nonzero(c) <= 1 or len(idx) < 2 * min_leaf
                or (max_depth is not None and depth >= max_depth)):
            continue
        feats = rng.sample(F, mtry)
        best = _best_split(X[idx], y[idx], feats, n_classes, min_leaf)
        if best is None:
            continue
        f, thr = best
        go_left = X[idx, f] < thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is grown (and numbered) first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return DecisionTree(np.asarray(feature, dtype=np.int64), np.asarray(threshold, dtype=np.float64),
                        np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
                        np.asarray(counts, dtype=np.int64).reshape(len(feature), n_classes))


def train(X: np.ndarray, y: Sequence[int], config: TrainConfig = TrainConfig(), *,
          schema: Sequence[str] | None = None, sample_ids: Sequence | None = None,
          workers: int = 1) -> ForestModel:
    """Train a forest on rows of X with class-id labels y.

    When ``sample_ids`` is given, rows are first sorted by id so the model does
    not depend on input order.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) == 0:
        raise ForestError("empty training set")
    if len(y) != len(X):
        raise ForestError("labels and samples differ in length")
    if not np.isfinite(X).all():
        raise ForestError("training features must be finite")
    if schema is None:
        schema = tuple(f"f{i}" for i in range(X.shape[1]))
    schema = tuple(schema)
    if len(schema) != X.shape[1]:
        raise ForestError("schema length does not match the feature count")
    if sample_ids is not None:
        if len(sample_ids) != len(X):
            raise ForestError("sample_ids and samples differ in length")
        order = sorted(range(len(X)), key=lambda i: sample_ids[i])
        X, y = X[order], y[order]
    classes = sorted(set(y.tolist()))
    if len(classes) < 2:
        raise ForestError("training set needs at least two classes")
    if config.n_trees < 1 or config.min_leaf < 1:
        raise ForestError("n_trees and min_leaf must be >= 1")
    yi = np.searchsorted(classes, y)
    mtry = config.resolved_mtry(X.shape[1])
    n = len(X)

    def one(t: int) -> DecisionTree:
        rng = SplitMix64(derive_seed(config.seed, "tree", t))
        boot = np.asarray(rng.choices(n, n) if config.bootstrap else range(n), dtype=np.int64)
        return _grow(X, yi, len(classes), boot, mtry, config.min_leaf, config.max_depth, rng)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        trees = list(ex.map(one, range(config.n_trees)))
    return ForestModel(trees, classes, schema, config)


def feature_importance(model: ForestModel) -> dict[str, float]:
    """Mean decrease in Gini impurity per feature, normalized to sum to 1."""
    total = np.zeros(model.n_features)
    for tree in model.trees:
        root_n = tree.counts[0].sum()
        for node in np.flatnonzero(tree.feature >= 0):
            parent = tree.counts[node]
            lc, rc = tree.counts[tree.left[node]], tree.counts[tree.right[node]]
            n, nl, nr = parent.sum(), lc.sum(), rc.sum()
            dec = gini_impurity(parent) - (nl / n) * gini_impurity(lc) - (nr / n) * gini_impurity(rc)
            total[tree.feature[node]] += (n / root_n) * dec
    total /= len(model.trees)
    s = total.sum()
    if s > 0:
        total = total / s
    return {name: float(v) for name, v in zip(model.schema, total)}
