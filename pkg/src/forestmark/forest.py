"""Binary decision trees and bootstrap-free random forests.

Trees follow the usual grammar: a tree is ``Leaf(label)`` or
``Internal(feature, threshold, left, right)`` and an instance goes left iff
``x[feature] <= threshold``. Feature indices are 0-based.

Training is deterministic given the data, the weights and the feature subset:
split ties go to the lowest feature index and then the lowest threshold, and
leaf-label ties go to +1. The only randomness in a forest is the per-tree
feature subset, derived from ``(seed, tree index)``.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .dataset import Dataset
from .seeding import derive_seed, rng

FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# tree structure


@dataclass(frozen=True)
class Leaf:
    label: int

    def __post_init__(self):
        if self.label not in (-1, 1):
            raise ValueError(f"leaf label must be -1 or +1, got {self.label}")


@dataclass(frozen=True)
class Internal:
    feature: int
    threshold: float
    left: "Node"
    right: "Node"


Node = Union[Leaf, Internal]


@dataclass(frozen=True)
class TreeStats:
    depth: int
    leaves: int


def tree_stats(t: Node) -> TreeStats:
    if isinstance(t, Leaf):
        return TreeStats(0, 1)
    a, b = tree_stats(t.left), tree_stats(t.right)
    return TreeStats(1 + max(a.depth, b.depth), a.leaves + b.leaves)


def iter_internal(t: Node) -> Iterable[Internal]:
    stack = [t]
    while stack:
        node = stack.pop()
        if isinstance(node, Internal):
            yield node
            stack.extend((node.right, node.left))


@dataclass(frozen=True)
class _Flat:
    """Array form of a tree for batch prediction; leaves have feature -1."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    label: np.ndarray

    @classmethod
    def of(cls, t: Node) -> "_Flat":
        feat, thr, lft, rgt, lab = [], [], [], [], []

        def visit(node) -> int:
            i = len(feat)
            feat.append(-1), thr.append(0.0), lft.append(-1), rgt.append(-1), lab.append(0)
            if isinstance(node, Leaf):
                lab[i] = node.label
            else:
                feat[i], thr[i] = node.feature, node.threshold
                lft[i] = visit(node.left)
                rgt[i] = visit(node.right)
            return i

        visit(t)
        return cls(np.array(feat), np.array(thr, dtype=np.float64), np.array(lft),
                   np.array(rgt), np.array(lab))

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while len(active):
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
        return self.label[node]


def predict_tree(t: Node, x) -> int | np.ndarray:
    """Label of one instance, or a label vector for a 2-D batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        node = t
        while isinstance(node, Internal):
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.label
    return _Flat.of(t).predict(x)


# ---------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True, eq=False)
class Ensemble:
    trees: tuple[Node, ...]
    feature_subsets: tuple[tuple[int, ...], ...]
    d: int

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "feature_subsets", tuple(tuple(int(f) for f in s) for s in self.feature_subsets))
        if not self.trees:
            raise ValueError("an ensemble needs at least one tree")
        if len(self.feature_subsets) != len(self.trees):
            raise ValueError("one feature subset per tree required")
        for t, subset in zip(self.trees, self.feature_subsets):
            allowed = set(subset)
            for node in iter_internal(t):
                if node.feature not in allowed:
                    raise ValueError(f"tree splits on feature {node.feature} outside its subset")
                if not 0 <= node.feature < self.d:
                    raise ValueError(f"feature {node.feature} out of range for d={self.d}")

    @property
    def m(self) -> int:
        return len(self.trees)

    @cached_property
    def _flat(self) -> tuple[_Flat, ...]:
        return tuple(_Flat.of(t) for t in self.trees)

    def predict_all(self, X) -> np.ndarray:
        """Per-tree labels: shape (m,) for one instance, (n, m) for a batch."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X2 = X.reshape(1, -1) if single else X
        if X2.shape[1] != self.d:
            raise ValueError(f"instances have {X2.shape[1]} features, model expects {self.d}")
        out = np.column_stack([f.predict(X2) for f in self._flat]) if len(X2) else np.zeros((0, self.m), dtype=np.int64)
        return out[0] if single else out

    __call__ = predict_all

    def predict(self, X) -> np.ndarray:
        votes = self.predict_all(X).sum(axis=-1)
        return np.where(votes >= 0, 1, -1)

    def structurally_equal(self, other: "Ensemble") -> bool:
        return (self.d == other.d and self.trees == other.trees
                and self.feature_subsets == other.feature_subsets)


def predict_all(T: Ensemble, x) -> np.ndarray:
    return T.predict_all(x)


def predict_majority(T: Ensemble, x) -> int | np.ndarray:
    """Majority vote over the trees; an even split goes to +1."""
    out = T.predict(x)
    return int(out) if np.ndim(out) == 0 else out


def accuracy(T: Ensemble, data: Dataset) -> float:
    if data.n == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    return float(np.mean(T.predict(data.features) == data.labels))


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class HyperParams:
    """Forest hyper-parameters. ``None`` bounds mean unbounded; a ``None``
    ``features_per_tree`` means ceil(sqrt(d))."""

    m: int = 100
    max_depth: int | None = None
    max_leaves: int | None = None
    min_samples_leaf: int = 1
    features_per_tree: int | None = None
    criterion: str = "gini"
    seed: int = 0

    def n_features(self, d: int) -> int:
        return self.features_per_tree if self.features_per_tree is not None else math.ceil(math.sqrt(d))

    def validate(self, d: int) -> "HyperParams":
        if self.m < 1:
            raise ValueError("m must be positive")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")
        if self.max_leaves is not None and self.max_leaves < 1:
            raise ValueError("max_leaves must be positive")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be positive")
        if not 1 <= self.n_features(d) <= d:
            raise ValueError(f"features_per_tree must be in [1, {d}]")
        if self.criterion not in ("gini", "entropy"):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        return self


def _child_impurity(w: np.ndarray, p: np.ndarray, criterion: str) -> np.ndarray:
    """Weighted impurity ``W * imp`` of nodes with total weight w, positive weight p."""
    n = w - p
    with np.errstate(divide="ignore", invalid="ignore"):
        if criterion == "gini":
            return w - (p * p + n * n) / w
        out = np.zeros_like(w)
        for part in (p, n):
            term = np.where(part > 0, part * np.log2(np.where(part > 0, part, 1.0) / w), 0.0)
            out -= term
        return out


@dataclass
class _Grow:
    idx: np.ndarray
    depth: int
    label: int
    split: tuple | None = None
    left: "_Grow | None" = None
    right: "_Grow | None" = None

    def freeze(self, features) -> Node:
        if self.left is None:
            return Leaf(self.label)
        j, thr = self.split
        return Internal(int(features[j]), float(thr), self.left.freeze(features), self.right.freeze(features))


def train_tree_weighted(data: Dataset, weights, feature_subset, hp: HyperParams) -> Node:
    """Greedy weighted CART on the given feature subset.

    Split candidates are midpoints between consecutive distinct values. Leaves
    are expanded best-first (largest weighted impurity decrease) until
    ``hp.max_leaves`` is reached or no leaf can be split. ``min_samples_leaf``
    counts rows with multiplicity, i.e. it bounds the weight of each child.
    """
    if data.n == 0:
        raise ValueError("cannot train on an empty dataset")
    features = np.array(sorted(set(int(f) for f in feature_subset)), dtype=np.int64)
    if len(features) == 0:
        raise ValueError("feature subset is empty")
    w = np.ones(data.n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (data.n,) or np.any(w < 1):
        raise ValueError("weights must be one value >= 1 per row")
    X = data.features[:, features]
    wp = np.where(data.labels == 1, w, 0.0)
    msl = hp.min_samples_leaf

    def make(idx, depth) -> _Grow:
        W, P = w[idx].sum(), wp[idx].sum()
        node = _Grow(idx, depth, 1 if P >= W - P else -1)
        if P == 0 or P == W or (hp.max_depth is not None and depth >= hp.max_depth) or W < 2 * msl:
            return node
        Xn = X[idx]
        order = np.argsort(Xn, axis=0, kind="stable")
        xs = np.take_along_axis(Xn, order, axis=0)
        cw = np.cumsum(w[idx][order], axis=0)[:-1]
        cp = np.cumsum(wp[idx][order], axis=0)[:-1]
        ok = (xs[1:] > xs[:-1]) & (cw >= msl) & (W - cw >= msl)
        if not ok.any():
            return node
        score = _child_impurity(cw, cp, hp.criterion) + _child_impurity(W - cw, P - cp, hp.criterion)
        score = np.where(ok, score, np.inf).T.ravel()
        # ties (up to rounding) go to the lowest feature, then the lowest threshold
        best = int(np.flatnonzero(score <= score.min() + 1e-12 * W)[0])
        j, i = divmod(best, len(xs) - 1)
        a, b = xs[i, j], xs[i + 1, j]
        thr = (a + b) / 2
        if thr >= b:
            thr = a
        parent = _child_impurity(np.array([W]), np.array([P]), hp.criterion)[0]
        node.split = (j, thr, max(parent - score[best], 0.0))
        return node

    root = make(np.arange(data.n), 0)
    heap, counter, leaves = [], itertools.count(), 1
    if root.split is not None:
        heapq.heappush(heap, (-root.split[2], next(counter), root))
    while heap and (hp.max_leaves is None or leaves < hp.max_leaves):
        _, _, node = heapq.heappop(heap)
        j, thr, _ = node.split
        go_left = X[node.idx, j] <= thr
        node.left = make(node.idx[go_left], node.depth + 1)
        node.right = make(node.idx[~go_left], node.depth + 1)
        node.split = (j, thr)
        leaves += 1
        for child in (node.left, node.right):
            if child.split is not None:
                heapq.heappush(heap, (-child.split[2], next(counter), child))
    return root.freeze(features)


def tree_feature_subset(hp: HyperParams, d: int, i: int) -> tuple[int, ...]:
    k = hp.n_features(d)
    if k == d:
        return tuple(range(d))
    return tuple(sorted(int(f) for f in rng(hp.seed, "tree", i).choice(d, size=k, replace=False)))


def train_forest(data: Dataset, weights, hp: HyperParams) -> Ensemble:
    """``hp.m`` trees, each on all rows and its own random feature subset."""
    hp.validate(data.d)
    subsets = [tree_feature_subset(hp, data.d, i) for i in range(hp.m)]
    trees = [train_tree_weighted(data, weights, s, hp) for s in subsets]
    return Ensemble(tuple(trees), tuple(subsets), data.d)


# ---------------------------------------------------------------------------
# grid search

DEFAULT_GRID = {
    "max_depth": [4, 6, 8, 12, 16, 20, None],
    "min_samples_leaf": [1, 2, 5, 10],
    "criterion": ["gini"],
}


def grid_points(base: HyperParams, grid: dict) -> list[HyperParams]:
    keys = list(grid)
    return [replace(base, **dict(zip(keys, values))) for values in itertools.product(*(grid[k] for k in keys))]


def stratified_folds(labels: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold number per row; each class is shuffled and dealt round-robin."""
    gen = rng(seed, "folds")
    assign = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for c in (-1, 1):
        members = np.flatnonzero(labels == c)
        gen.shuffle(members)
        assign[members] = (np.arange(len(members)) + offset) % folds
        offset += len(members)
    return assign


def cv_accuracy(data: Dataset, hp: HyperParams, folds: int, seed: int) -> float:
    assign = stratified_folds(data.labels, folds, seed)
    scores = []
    for f in range(folds):
        train, held = data.subset(np.flatnonzero(assign != f)), data.subset(np.flatnonzero(assign == f))
        model = train_forest(train, None, replace(hp, seed=derive_seed(seed, "cv", f)))
        scores.append(accuracy(model, held))
    return float(np.mean(scores))


def grid_search(data: Dataset, m: int, grid: dict | None = None, folds: int = 5, seed: int = 0,
                base: HyperParams | None = None) -> HyperParams:
    """Grid point with the best mean stratified k-fold accuracy (first wins ties)."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    points = grid_points(replace(base or HyperParams(), m=m, seed=seed), grid or DEFAULT_GRID)
    if not points:
        raise ValueError("empty grid")
    best, best_score = None, -1.0
    for hp in points:
        hp.validate(data.d)
        score = cv_accuracy(data, hp, folds, seed)
        if score > best_score:
            best, best_score = hp, score
    return best


# ---------------------------------------------------------------------------
# serialization


def node_to_dict(t: Node) -> dict:
    if isinstance(t, Leaf):
        return {"leaf": t.label}
    return {"feature": t.feature, "threshold": t.threshold,
            "left": node_to_dict(t.left), "right": node_to_dict(t.right)}


def node_from_dict(obj: dict) -> Node:
    if "leaf" in obj:
        return Leaf(int(obj["leaf"]))
    return Internal(int(obj["feature"]), float(obj["threshold"]),
                    node_from_dict(obj["left"]), node_from_dict(obj["right"]))


def ensemble_to_dict(T: Ensemble) -> dict:
    return {"version": FORMAT_VERSION, "d": T.d, "m": T.m,
            "feature_subsets": [list(s) for s in T.feature_subsets],
            "trees": [node_to_dict(t) for t in T.trees]}


def ensemble_from_dict(obj: dict) -> Ensemble:
    if obj.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {obj.get('version')!r}")
    T = Ensemble(tuple(node_from_dict(t) for t in obj["trees"]),
                 tuple(tuple(s) for s in obj["feature_subsets"]), int(obj["d"]))
    if T.m != obj["m"]:
        raise ValueError("model file tree count does not match its trees")
    return T


def save_model(T: Ensemble, path) -> None:
    # json writes floats with repr, which round-trips bit-exactly
    Path(path).write_text(json.dumps(ensemble_to_dict(T), indent=1) + "\n", encoding="utf-8")


def load_model(path) -> Ensemble:
    return ensemble_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
