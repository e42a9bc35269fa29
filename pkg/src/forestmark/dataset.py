"""Labeled binary-classification data: loading, normalization, splits, trigger sets.

Labels are always encoded as -1/+1. Row ids are stable across subsetting, so a
trigger set can always be traced back to the rows of the training set it was
drawn from.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .seeding import rng

# Trigger sets are capped at this fraction of the training rows.
TRIGGER_CAP = 0.1


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class MinMax:
    """Per-feature affine map fitted on a training set."""

    lo: np.ndarray
    hi: np.ndarray

    def apply(self, features: np.ndarray) -> np.ndarray:
        span = self.hi - self.lo
        safe = np.where(span > 0, span, 1.0)
        out = (features - self.lo) / safe
        out = np.where(span > 0, out, 0.0)
        return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    feature_names: tuple[str, ...] | None = None
    norm: MinMax | None = field(default=None, repr=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {X.shape}")
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        if len(y) != len(X) or len(ids) != len(X):
            raise DatasetError("features, labels and ids disagree in length")
        if X.shape[1] < 1:
            raise DatasetError("dataset needs at least one feature")
        if not np.all((y == 1) | (y == -1)):
            raise DatasetError("labels must be -1 or +1")
        if len(np.unique(ids)) != len(ids):
            raise DatasetError("row ids must be unique")
        for arr in (X, y, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.features[index], self.labels[index], self.ids[index],
                       self.feature_names, self.norm)

    def positions(self, ids) -> np.ndarray:
        """Row positions of the given ids; raises if any id is absent."""
        lookup = {int(i): p for p, i in enumerate(self.ids)}
        try:
            return np.array([lookup[int(i)] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise DatasetError(f"id {exc.args[0]} not in dataset") from None

    def with_labels(self, ids, labels) -> "Dataset":
        """Copy with the labels of the rows ``ids`` replaced."""
        y = self.labels.copy()
        y[self.positions(ids)] = labels
        return Dataset(self.features, y, self.ids, self.feature_names, self.norm)

    @staticmethod
    def empty(d: int) -> "Dataset":
        return Dataset(np.zeros((0, d)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))


def concat(a: Dataset, b: Dataset) -> Dataset:
    return Dataset(np.vstack([a.features, b.features]),
                   np.concatenate([a.labels, b.labels]),
                   np.concatenate([a.ids, b.ids]),
                   a.feature_names, a.norm)


@dataclass(frozen=True, eq=False)
class TriggerSet:
    rows: Dataset

    def __post_init__(self):
        if self.rows.n and self.rows.n != len(np.unique(self.rows.ids)):
            raise DatasetError("duplicate trigger rows")

    @property
    def origin_ids(self) -> np.ndarray:
        return self.rows.ids

    @property
    def k(self) -> int:
        return self.rows.n

    def __len__(self) -> int:
        return self.k


# ---------------------------------------------------------------------------
# loaders


def _label_map(raw: Sequence[str]) -> dict[str, int]:
    classes = sorted(set(raw))
    if len(classes) != 2:
        raise DatasetError(f"expected exactly two classes, found {len(classes)}: {classes[:5]}")
    try:
        classes.sort(key=float)
    except ValueError:
        pass
    return {classes[0]: -1, classes[1]: 1}


def load_csv(path, label_column: str = "label", id_column: str = "id", *,
             strict: bool = True) -> Dataset:
    """Load a CSV with a header row into a :class:`Dataset`.

    The larger of the two class values becomes +1 (numeric comparison when both
    parse as numbers, string comparison otherwise). If an ``id_column`` is
    present it supplies the row ids, else rows are numbered from 0. Labels
    already written as -1/+1 are taken as-is. ``strict=False`` lifts the
    two-row and two-class requirements (used for trigger-set files).
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    if label_column not in header:
        raise DatasetError(f"{path}: no column named {label_column!r}")
    li = header.index(label_column)
    ii = header.index(id_column) if id_column in header else None
    fcols = [j for j in range(len(header)) if j not in (li, ii)]
    if strict and len(rows) < 2:
        raise DatasetError(f"{path}: need at least 2 rows, got {len(rows)}")
    X = np.empty((len(rows), len(fcols)))
    for r, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DatasetError(f"{path}:{r}: expected {len(header)} cells, got {len(row)}")
        for c, j in enumerate(fcols):
            try:
                X[r - 2, c] = float(row[j])
            except ValueError:
                raise DatasetError(f"{path}:{r}: non-numeric value {row[j]!r} in column {header[j]!r}") from None
    raw = [row[li].strip() for row in rows]
    if set(raw) <= {"-1", "1", "+1"}:
        y = np.array([1 if v in ("1", "+1") else -1 for v in raw], dtype=np.int64)
        if strict and len(np.unique(y)) < 2:
            raise DatasetError(f"{path}: single-class file")
    else:
        mapping = _label_map(raw)
        y = np.array([mapping[v] for v in raw], dtype=np.int64)
    if ii is None:
        ids = np.arange(len(rows))
    else:
        try:
            ids = np.array([int(row[ii]) for row in rows])
        except ValueError:
            raise DatasetError(f"{path}: non-integer id") from None
    return Dataset(X, y, ids, tuple(header[j] for j in fcols))


def save_csv(data: Dataset, path, id_column: str | None = "id") -> None:
    names = data.feature_names or tuple(f"f{j}" for j in range(data.d))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(([id_column] if id_column else []) + ["label", *names])
        for i, y, x in zip(data.ids, data.labels, data.features):
            w.writerow(([int(i)] if id_column else []) + [int(y), *map(repr, x.tolist())])


def load_libsvm(path, d: int | None = None) -> Dataset:
    """Load a LIBSVM sparse file (1-based indices) into a dense dataset."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"no such file: {path}")
    labels, entries = [], []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            head, *pairs = line.split()
            try:
                lab = float(head)
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: bad label {head!r}") from None
            if lab not in (-1.0, 0.0, 1.0):
                raise DatasetError(f"{path}:{lineno}: label {head!r} outside {{-1, 0, +1}}")
            row, last = [], 0
            for p in pairs:
                try:
                    idx_s, val_s = p.split(":")
                    idx, val = int(idx_s), float(val_s)
                except ValueError:
                    raise DatasetError(f"{path}:{lineno}: malformed pair {p!r}") from None
                if idx <= last:
                    raise DatasetError(f"{path}:{lineno}: indices must be increasing and >= 1")
                last = idx
                row.append((idx - 1, val))
            labels.append(1 if lab > 0 else -1)
            entries.append(row)
    if not labels:
        raise DatasetError(f"{path}: no data lines")
    width = max((r[-1][0] + 1 for r in entries if r), default=1)
    if d is None:
        d = width
    elif width > d:
        raise DatasetError(f"{path}: feature index {width} exceeds d={d}")
    X = np.zeros((len(labels), d))
    for r, row in enumerate(entries):
        for j, v in row:
            X[r, j] = v
    return Dataset(X, np.array(labels), np.arange(len(labels)))


def save_libsvm(data: Dataset, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for y, x in zip(data.labels, data.features):
            pairs = " ".join(f"{j + 1}:{v!r}" for j, v in enumerate(x.tolist()) if v != 0)
            fh.write(f"{int(y):+d} {pairs}".rstrip() + "\n")


# ---------------------------------------------------------------------------
# transforms


def normalize_minmax(data: Dataset, params: MinMax | None = None) -> Dataset:
    """Min-max scale to [0, 1].

    Without ``params`` the map is fitted on ``data`` and recorded in the
    result's ``norm``; pass a training set's ``norm`` to scale test data the
    same way (values outside the training range are clamped).
    """
    if params is None:
        params = MinMax(data.features.min(axis=0), data.features.max(axis=0))
    return Dataset(params.apply(data.features), data.labels, data.ids, data.feature_names, params)


def _allocate(counts: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder split of ``total`` proportional to ``counts``."""
    quota = counts * total / counts.sum()
    alloc = np.floor(quota).astype(int)
    rest = total - alloc.sum()
    order = sorted(range(len(counts)), key=lambda c: (-(quota[c] - alloc[c]), c))
    for c in order[:rest]:
        alloc[c] += 1
    return alloc


def _resolve_size(size, n: int) -> int:
    if isinstance(size, float) and not size.is_integer():
        if not 0 < size < 1:
            raise DatasetError(f"fraction must be in (0, 1), got {size}")
        size = round(size * n)
    size = int(size)
    if size <= 0:
        raise DatasetError("sample size must be positive")
    if size > n:
        raise DatasetError(f"sample size {size} exceeds {n} rows")
    return size


def _stratified_index(labels: np.ndarray, size: int, gen: np.random.Generator) -> np.ndarray:
    classes = np.array([-1, 1])
    members = [np.flatnonzero(labels == c) for c in classes]
    counts = np.array([len(m) for m in members])
    alloc = _allocate(counts, size)
    picked = [gen.choice(m, size=a, replace=False) for m, a in zip(members, alloc) if len(m)]
    return np.sort(np.concatenate(picked))


def stratified_sample(data: Dataset, size, seed: int) -> Dataset:
    """Class-stratified sample without replacement, rows kept in original order.

    ``size`` is a row count (int) or a fraction of the rows (float in (0, 1)).
    """
    size = _resolve_size(size, data.n)
    return data.subset(_stratified_index(data.labels, size, rng(seed, "stratified_sample")))


def train_test_split(data: Dataset, test_frac: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified split; the test side gets ``ceil(test_frac * n)`` rows."""
    n_test = math.ceil(test_frac * data.n)
    if not 0 < n_test < data.n:
        raise DatasetError(f"test fraction {test_frac} leaves an empty side")
    test_idx = _stratified_index(data.labels, n_test, rng(seed, "train_test_split"))
    mask = np.zeros(data.n, dtype=bool)
    mask[test_idx] = True
    return data.subset(np.flatnonzero(~mask)), data.subset(test_idx)


def trigger_size(n_train: int, frac: float) -> int:
    return math.floor(frac * n_train + 1e-9)


def sample_trigger(train: Dataset, k: int, seed: int) -> TriggerSet:
    """Uniform sample of ``k`` training rows, keeping their labels and ids."""
    cap = math.floor(TRIGGER_CAP * train.n + 1e-9)
    if not 1 <= k <= cap:
        raise DatasetError(f"trigger size {k} outside [1, {cap}] for {train.n} training rows")
    idx = np.sort(rng(seed, "sample_trigger").choice(train.n, size=k, replace=False))
    return TriggerSet(train.subset(idx))


def flip_labels(ts: TriggerSet) -> TriggerSet:
    r = ts.rows
    return TriggerSet(Dataset(r.features, -r.labels, r.ids, r.feature_names, r.norm))


def empty_trigger(d: int) -> TriggerSet:
    return TriggerSet(Dataset.empty(d))


def save_trigger_csv(ts: TriggerSet, path) -> None:
    save_csv(ts.rows, path, id_column="origin_id")


def load_trigger_csv(path) -> TriggerSet:
    return TriggerSet(load_csv(path, id_column="origin_id", strict=False))
