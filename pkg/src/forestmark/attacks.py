"""Attacks on watermarked forests: structural detection and trigger-set forgery.

Forgery looks for an instance on which every tree outputs a prescribed label.
Each tree's region for a label is a union of axis-aligned leaf boxes, so the
problem is to pick one box per tree with a non-empty common intersection. The
solver does this exactly by depth-first search with propagation; it never
returns an unsound instance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .forest import Ensemble, Leaf, Node, tree_stats
from .watermark import Signature

DEFAULT_NODE_BUDGET = 10**7


# ---------------------------------------------------------------------------
# boxes


@dataclass(frozen=True, eq=False)
class Box:
    """Product of half-open intervals ``(lo, hi]``; bounds may be infinite."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def full(cls, d: int) -> "Box":
        return cls(np.full(d, -np.inf), np.full(d, np.inf))

    @classmethod
    def closed(cls, lo, hi) -> "Box":
        """Box holding the closed interval ``[lo, hi]`` per dimension."""
        return cls(np.nextafter(np.asarray(lo, dtype=np.float64), -np.inf), np.asarray(hi, dtype=np.float64))

    @property
    def d(self) -> int:
        return len(self.lo)

    def __and__(self, other: "Box") -> "Box":
        return Box(np.maximum(self.lo, other.lo), np.minimum(self.hi, other.hi))

    intersect = __and__

    def is_empty(self) -> bool:
        return bool(np.any(self.lo >= self.hi))

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all((self.lo < x) & (x <= self.hi)))

    def __eq__(self, other) -> bool:
        return isinstance(other, Box) and np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __repr__(self) -> str:
        parts = [f"x{j}∈({a:g},{b:g}]" for j, (a, b) in enumerate(zip(self.lo, self.hi))
                 if a != -np.inf or b != np.inf]
        return "Box(" + ", ".join(parts) + ")"


def leaf_boxes(t: Node, target: int, d: int) -> list[Box]:
    """One box per leaf of ``t`` labeled ``target``, in left-to-right leaf order."""
    out = []

    def walk(node, lo, hi):
        if isinstance(node, Leaf):
            if node.label == target:
                out.append(Box(lo.copy(), hi.copy()))
            return
        f, v = node.feature, node.threshold
        old = hi[f]
        hi[f] = min(old, v)
        walk(node.left, lo, hi)
        hi[f] = old
        old = lo[f]
        lo[f] = max(old, v)
        walk(node.right, lo, hi)
        lo[f] = old

    walk(t, np.full(d, -np.inf), np.full(d, np.inf))
    return out


def epsilon_box(z, epsilon: float, domain: tuple[float, float] = (0.0, 1.0)) -> Box:
    """Closed L-inf ball around ``z`` clipped to the domain.

    Bounds are nudged inward so every float inside satisfies ``|x - z| <= epsilon``
    when the difference is evaluated in floating point.
    """
    z = np.asarray(z, dtype=np.float64)
    lo = np.maximum(domain[0], z - epsilon)
    hi = np.minimum(domain[1], z + epsilon)
    while np.any(bad := (z - lo > epsilon)):
        lo = np.where(bad, np.nextafter(lo, np.inf), lo)
    while np.any(bad := (hi - z > epsilon)):
        hi = np.where(bad, np.nextafter(hi, -np.inf), hi)
    return Box.closed(lo, hi)


def pick_witness(box: Box, z) -> np.ndarray:
    """A point of a non-empty box: ``z_j`` where it fits, else the upper bound, else the midpoint."""
    z = np.asarray(z, dtype=np.float64)
    inside = (box.lo < z) & (z <= box.hi)
    mid = np.where(np.isfinite(box.lo), box.lo, 0.0) / 2 + np.where(np.isfinite(box.hi), box.hi, 0.0) / 2
    return np.where(inside, z, np.where(np.isfinite(box.hi), box.hi, mid))


# ---------------------------------------------------------------------------
# detection


@dataclass(frozen=True)
class DetectionReport:
    strategy: str
    statistic: str
    mean: float
    std: float
    assigned: tuple[int | None, ...]
    correct: int | None = None
    wrong: int | None = None
    uncertain: int = 0

    def row(self) -> dict:
        return {"statistic": self.statistic, "mean": self.mean, "std": self.std, "correct": self.correct,
                "wrong": self.wrong, "uncertain": self.uncertain, "strategy": self.strategy}


def tree_statistic(T: Ensemble, statistic: str) -> np.ndarray:
    if statistic not in ("depth", "leaves"):
        raise ValueError(f"unknown statistic {statistic!r}")
    return np.array([getattr(tree_stats(t), statistic) for t in T.trees], dtype=np.float64)


def _report(strategy, statistic, values, assigned, sigma) -> DetectionReport:
    mu, s = float(values.mean()), float(values.std())
    uncertain = sum(a is None for a in assigned)
    if sigma is None:
        return DetectionReport(strategy, statistic, mu, s, tuple(assigned), uncertain=uncertain)
    if len(sigma) != len(assigned):
        raise ValueError("signature length differs from the number of trees")
    correct = sum(a is not None and a == b for a, b in zip(assigned, sigma.bits))
    wrong = sum(a is not None and a != b for a, b in zip(assigned, sigma.bits))
    return DetectionReport(strategy, statistic, mu, s, tuple(assigned), correct, wrong, uncertain)


def detect_band_values(values, statistic: str = "custom", sigma: Signature | None = None) -> DetectionReport:
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        raise ValueError("detection needs at least two trees")
    mu, s = values.mean(), values.std()
    assigned = [0 if v < mu - s else 1 if v > mu + s else None for v in values]
    return _report("band", statistic, values, assigned, sigma)


def detect_mean_values(values, statistic: str = "custom", sigma: Signature | None = None) -> DetectionReport:
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        raise ValueError("detection needs at least two trees")
    mu = values.mean()
    assigned = [0 if v < mu else 1 for v in values]
    return _report("mean", statistic, values, assigned, sigma)


def detect_band(T: Ensemble, statistic: str, sigma: Signature | None = None) -> DetectionReport:
    """Bit 0 strictly below mean - std, bit 1 strictly above mean + std, else uncertain."""
    return detect_band_values(tree_statistic(T, statistic), statistic, sigma)


def detect_mean(T: Ensemble, statistic: str, sigma: Signature | None = None) -> DetectionReport:
    """Bit 0 below the mean, bit 1 at or above it."""
    return detect_mean_values(tree_statistic(T, statistic), statistic, sigma)


# ---------------------------------------------------------------------------
# forgery


class ForgeStatus(str, Enum):
    FORGED = "forged"
    INFEASIBLE = "infeasible"
    TIMEOUT = "timeout"


class ForgeryTimeout(RuntimeError):
    pass


def required_labels(sigma: Signature, y: int) -> np.ndarray:
    return np.where(np.array(sigma.bits) == 0, y, -y)


def pattern_holds(T: Ensemble, sigma: Signature, y: int, x) -> bool:
    return bool(np.array_equal(T.predict_all(np.asarray(x, dtype=np.float64)), required_labels(sigma, y)))


class LeafIndex:
    """Leaf boxes of every tree for both labels, stacked for vectorized search."""

    def __init__(self, T: Ensemble):
        self.m, self.d = T.m, T.d
        self._by_label = {}
        for y in (-1, 1):
            per_tree = [leaf_boxes(t, y, T.d) for t in T.trees]
            self._by_label[y] = [(np.array([b.lo for b in bs]).reshape(-1, T.d),
                                  np.array([b.hi for b in bs]).reshape(-1, T.d)) for bs in per_tree]

    def stacked(self, required: Sequence[int], region: Box):
        """Boxes of each tree for its required label, clipped to ``region``.

        Returns (lo, hi, starts) with tree i's boxes at rows starts[i]:starts[i+1],
        or None if some tree has no box meeting the region.
        """
        los, his, counts = [], [], []
        for i, y in enumerate(required):
            lo, hi = self._by_label[int(y)][i]
            lo, hi = np.maximum(lo, region.lo), np.minimum(hi, region.hi)
            keep = np.all(lo < hi, axis=1)
            if not keep.any():
                return None
            los.append(lo[keep]), his.append(hi[keep]), counts.append(int(keep.sum()))
        starts = np.concatenate([[0], np.cumsum(counts)])
        return np.vstack(los), np.vstack(his), starts


@dataclass
class SolveResult:
    status: ForgeStatus
    witness: np.ndarray | None = None
    box: Box | None = None
    expansions: int = 0


def solve_boxes(lo: np.ndarray, hi: np.ndarray, starts: np.ndarray, region: Box, prefer,
                budget: int = DEFAULT_NODE_BUDGET) -> SolveResult:
    """Choose one box per group with a non-empty common intersection inside ``region``.

    Propagation keeps, per group, only boxes meeting the current intersection and
    shrinks the intersection to the bounding hull of every group's surviving
    boxes. Branching picks the group with the fewest surviving boxes, trying
    boxes nearest to ``prefer`` first. Each branch taken costs one expansion.
    """
    prefer = np.asarray(prefer, dtype=np.float64)
    seg = starts[:-1]
    # distance from the preferred point to each box, for value ordering
    gap = np.maximum(np.maximum(lo - prefer, prefer - hi), 0.0).max(axis=1)
    expansions = 0

    def propagate(cur_lo, cur_hi, alive):
        while True:
            alive = alive & np.all((np.maximum(lo, cur_lo) < np.minimum(hi, cur_hi)), axis=1)
            counts = np.add.reduceat(alive.astype(np.int64), seg)
            if np.any(counts == 0):
                return None
            hull_lo = np.minimum.reduceat(np.where(alive[:, None], lo, np.inf), seg).max(axis=0)
            hull_hi = np.maximum.reduceat(np.where(alive[:, None], hi, -np.inf), seg).min(axis=0)
            new_lo, new_hi = np.maximum(cur_lo, hull_lo), np.minimum(cur_hi, hull_hi)
            if np.any(new_lo >= new_hi):
                return None
            if np.array_equal(new_lo, cur_lo) and np.array_equal(new_hi, cur_hi):
                return cur_lo, cur_hi, alive, counts
            cur_lo, cur_hi = new_lo, new_hi

    def search(state):
        nonlocal expansions
        cur_lo, cur_hi, alive, counts = state
        open_groups = np.flatnonzero(counts > 1)
        if not len(open_groups):
            return Box(cur_lo, cur_hi)
        g = open_groups[np.argmin(counts[open_groups])]
        members = np.flatnonzero(alive[starts[g]:starts[g + 1]]) + starts[g]
        members = members[np.argsort(gap[members], kind="stable")]
        for b in members:
            if expansions >= budget:
                raise ForgeryTimeout
            expansions += 1
            trial = alive.copy()
            trial[starts[g]:starts[g + 1]] = False
            trial[b] = True
            nxt = propagate(np.maximum(cur_lo, lo[b]), np.minimum(cur_hi, hi[b]), trial)
            if nxt is not None:
                found = search(nxt)
                if found is not None:
                    return found
        return None

    start = propagate(region.lo.copy(), region.hi.copy(), np.ones(len(lo), dtype=bool))
    if start is None:
        return SolveResult(ForgeStatus.INFEASIBLE)
    try:
        box = search(start)
    except ForgeryTimeout:
        return SolveResult(ForgeStatus.TIMEOUT, expansions=expansions)
    if box is None:
        return SolveResult(ForgeStatus.INFEASIBLE, expansions=expansions)
    return SolveResult(ForgeStatus.FORGED, pick_witness(box, prefer), box, expansions)


def solve_pattern(T: Ensemble, required: Sequence[int], region: Box, prefer,
                  budget: int = DEFAULT_NODE_BUDGET, index: LeafIndex | None = None) -> SolveResult:
    """Find x in ``region`` with ``t_i(x) = required[i]`` for every tree."""
    if len(required) != T.m:
        raise ValueError("one required label per tree")
    index = index or LeafIndex(T)
    stacked = index.stacked(required, region)
    if stacked is None:
        return SolveResult(ForgeStatus.INFEASIBLE)
    result = solve_boxes(*stacked, region, prefer, budget)
    if result.status is ForgeStatus.FORGED:
        x = result.witness
        if not (region.contains(x) and np.array_equal(T.predict_all(x), np.asarray(required))):
            raise AssertionError("solver produced an instance that does not satisfy the pattern")
    return result


def forge_instance(T: Ensemble, sigma_fake: Signature, y: int, z, epsilon: float,
                   budget: int = DEFAULT_NODE_BUDGET, index: LeafIndex | None = None) -> np.ndarray | None:
    """Instance within L-inf distance ``epsilon`` of ``z`` showing the pattern of ``sigma_fake``.

    Trees with bit 0 must output ``y``, trees with bit 1 must output ``-y``.
    Returns None when no such instance exists; raises :class:`ForgeryTimeout`
    when the node budget runs out first.
    """
    result = _forge(T, sigma_fake, y, z, epsilon, budget, index)
    if result.status is ForgeStatus.TIMEOUT:
        raise ForgeryTimeout(f"node budget {budget} exhausted")
    return result.witness


def _forge(T, sigma_fake, y, z, epsilon, budget, index) -> SolveResult:
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must be in (0, 1]")
    if len(sigma_fake) != T.m:
        raise ValueError(f"signature has {len(sigma_fake)} bits for {T.m} trees")
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (T.d,):
        raise ValueError(f"instance must have {T.d} features")
    return solve_pattern(T, required_labels(sigma_fake, y), epsilon_box(z, epsilon), z, budget, index)


@dataclass(frozen=True)
class ForgeRecord:
    seed_row_id: int
    target: int
    status: ForgeStatus
    instance: np.ndarray | None
    linf: float | None
    expansions: int


@dataclass
class ForgeryResult:
    epsilon: float
    k_original: int
    records: list[ForgeRecord] = field(default_factory=list)
    total_rows: int = 0

    @property
    def forged(self) -> list[ForgeRecord]:
        return [r for r in self.records if r.status is ForgeStatus.FORGED]

    @property
    def attempted(self) -> int:
        return len(self.records)

    @property
    def infeasible(self) -> int:
        return sum(r.status is ForgeStatus.INFEASIBLE for r in self.records)

    @property
    def timeouts(self) -> int:
        return sum(r.status is ForgeStatus.TIMEOUT for r in self.records)

    @property
    def complete(self) -> bool:
        return self.attempted == self.total_rows

    @property
    def ratio(self) -> float:
        return min(1.0, len(self.forged) / self.k_original) if self.k_original else 0.0


def forge_trigger_set(T: Ensemble, sigma_fake: Signature, test: Dataset, epsilon: float, k_original: int,
                      per_instance_budget: int = DEFAULT_NODE_BUDGET, wall_clock_budget: float | None = None,
                      flip_target: bool = False, index: LeafIndex | None = None) -> ForgeryResult:
    """Try to forge one trigger instance around every test row, in row order.

    The target label is the row's own label (its opposite with ``flip_target``).
    Stops early, keeping partial results, once ``wall_clock_budget`` seconds pass.
    """
    index = index or LeafIndex(T)
    result = ForgeryResult(epsilon, k_original, total_rows=test.n)
    deadline = None if wall_clock_budget is None else time.monotonic() + wall_clock_budget
    for rid, y, z in zip(test.ids, test.labels, test.features):
        if deadline is not None and time.monotonic() > deadline:
            break
        target = -int(y) if flip_target else int(y)
        res = _forge(T, sigma_fake, target, z, epsilon, per_instance_budget, index)
        x = res.witness
        linf = float(np.max(np.abs(x - z))) if x is not None else None
        result.records.append(ForgeRecord(int(rid), target, res.status, x, linf, res.expansions))
    return result
