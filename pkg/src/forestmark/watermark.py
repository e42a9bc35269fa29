"""Signature-driven watermark embedding and black-box verification.

A signature bit of 0 forces its tree to classify every trigger row correctly,
a bit of 1 forces it to misclassify every trigger row. The two groups of trees
are trained separately (with identical, deliberately shrunk hyper-parameters)
and then interleaved in signature order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .dataset import Dataset, DatasetError, TriggerSet, concat, flip_labels, sample_trigger
from .forest import Ensemble, HyperParams, grid_search, train_forest, tree_stats
from .seeding import derive_seed, rng

DEFAULT_MAX_ROUNDS = 200
VERIFY_SEED = 20240917


class NonConvergence(RuntimeError):
    def __init__(self, rounds: int, failing_trees: int, failing_rows: int):
        super().__init__(f"trigger behaviour not learned after {rounds} rounds "
                         f"({failing_trees} trees still wrong on {failing_rows} trigger rows)")
        self.rounds = rounds
        self.failing_trees = failing_trees
        self.failing_rows = failing_rows


class IncompatibleModel(ValueError):
    pass


@dataclass(frozen=True)
class Signature:
    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if not bits or any(b not in (0, 1) for b in bits):
            raise ValueError("a signature is a non-empty sequence of 0/1 bits")
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def m(self) -> int:
        return len(self.bits)

    @property
    def zeros(self) -> int:
        return self.bits.count(0)

    def flipped(self, i: int) -> "Signature":
        b = list(self.bits)
        b[i] ^= 1
        return Signature(tuple(b))

    def __str__(self) -> str:
        return "".join(map(str, self.bits))

    @classmethod
    def parse(cls, text: str) -> "Signature":
        text = text.strip()
        if not text or set(text) - {"0", "1"}:
            raise ValueError("signature must be a line of 0/1 characters")
        return cls(tuple(int(c) for c in text))

    @classmethod
    def random(cls, m: int, ones_frac: float = 0.5, seed: int = 0) -> "Signature":
        """``round(ones_frac * m)`` ones at uniformly random positions."""
        if not 0 <= ones_frac <= 1:
            raise ValueError("ones_frac must be in [0, 1]")
        ones = int(round(ones_frac * m))
        bits = np.zeros(m, dtype=int)
        bits[rng(seed, "signature").permutation(m)[:ones]] = 1
        return cls(tuple(bits.tolist()))


def save_signature(sigma: Signature, path) -> None:
    Path(path).write_text(str(sigma) + "\n", encoding="utf-8")


def load_signature(path) -> Signature:
    return Signature.parse(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# creation


def adjusted_bounds(depths: Sequence[float], leaves: Sequence[float]) -> tuple[int, int]:
    """``floor(mean - std)`` of depth and leaf count, clamped to at least 1 and 2."""
    def lower(values):
        v = np.asarray(values, dtype=np.float64)
        return math.floor(v.mean() - v.std() + 1e-9)

    return max(1, lower(depths)), max(2, lower(leaves))


def adjust_hyperparams(data: Dataset, hp: HyperParams) -> HyperParams:
    """Cap depth and leaves at mean minus std of a standard forest trained with ``hp``."""
    T = train_forest(data, None, hp)
    stats = [tree_stats(t) for t in T.trees]
    depth, leaves = adjusted_bounds([s.depth for s in stats], [s.leaves for s in stats])
    return replace(hp, max_depth=depth, max_leaves=leaves)


class TriggerFit(NamedTuple):
    ensemble: Ensemble
    rounds: int
    weights: np.ndarray


def train_with_trigger(train: Dataset, trigger: TriggerSet, m: int, hp: HyperParams,
                       max_rounds: int = DEFAULT_MAX_ROUNDS) -> TriggerFit:
    """Retrain with growing trigger-row weights until every tree fits the trigger labels.

    Round ``r`` uses forest seed ``derive_seed(hp.seed, "round", r)`` and trigger
    weights ``1 + r``; all other rows keep weight 1.
    """
    if m < 1:
        raise ValueError("m must be positive")
    pos = train.positions(trigger.origin_ids) if trigger.k else np.zeros(0, dtype=np.int64)
    if np.any(train.labels[pos] != trigger.rows.labels):
        raise DatasetError("trigger labels disagree with the training labels of those rows")
    weights = np.ones(train.n)
    Xt, yt = trigger.rows.features, trigger.rows.labels
    for r in range(max_rounds + 1):
        if r:
            weights[pos] += 1
        T = train_forest(train, weights, replace(hp, m=m, seed=derive_seed(hp.seed, "round", r)))
        if not trigger.k:
            return TriggerFit(T, r, weights)
        wrong = T.predict_all(Xt) != yt[:, None]
        if not wrong.any():
            return TriggerFit(T, r, weights)
    raise NonConvergence(max_rounds, int(wrong.any(axis=0).sum()), int(wrong.any(axis=1).sum()))


@dataclass(frozen=True, eq=False)
class WatermarkArtifacts:
    ensemble: Ensemble
    trigger: TriggerSet
    signature: Signature
    adjusted_hp: HyperParams
    rounds_T0: int
    rounds_T1: int
    search_hp: HyperParams | None = None


def interleave(sigma: Signature, T0: Ensemble | None, T1: Ensemble | None) -> Ensemble:
    pools = {0: iter(zip(T0.trees, T0.feature_subsets)) if T0 else iter(()),
             1: iter(zip(T1.trees, T1.feature_subsets)) if T1 else iter(())}
    picked = [next(pools[b]) for b in sigma.bits]
    d = (T0 or T1).d
    return Ensemble(tuple(t for t, _ in picked), tuple(s for _, s in picked), d)


def embed_watermark(train: Dataset, m: int, sigma: Signature, k: int, seed: int,
                    max_rounds: int = DEFAULT_MAX_ROUNDS, hp: HyperParams | None = None,
                    grid: dict | None = None, folds: int = 5) -> WatermarkArtifacts:
    """Watermark a forest of ``m`` trees with signature ``sigma`` and a ``k``-row trigger set.

    ``hp`` skips the grid search when the caller already has tuned hyper-parameters.
    """
    if len(sigma) != m:
        raise ValueError(f"signature has {len(sigma)} bits for {m} trees")
    if hp is None:
        hp = grid_search(train, m, grid, folds, seed=derive_seed(seed, "grid"))
    hp = replace(hp, m=m)
    trigger = sample_trigger(train, k, derive_seed(seed, "trigger"))
    m0 = sigma.zeros
    adjusted = adjust_hyperparams(train, replace(hp, seed=derive_seed(seed, "adjust")))

    T0 = T1 = None
    r0 = r1 = 0
    if m0:
        T0, r0, _ = train_with_trigger(train, trigger, m0, replace(adjusted, seed=derive_seed(seed, "T0")), max_rounds)
    if m - m0:
        flipped = flip_labels(trigger)
        train1 = train.with_labels(flipped.origin_ids, flipped.rows.labels)
        T1, r1, _ = train_with_trigger(train1, flipped, m - m0, replace(adjusted, seed=derive_seed(seed, "T1")), max_rounds)
    return WatermarkArtifacts(interleave(sigma, T0, T1), trigger, sigma, adjusted, r0, r1, hp)


def check_pattern(T: Ensemble, sigma: Signature, trigger: TriggerSet) -> np.ndarray:
    """Per tree: does it classify all trigger rows correctly exactly when its bit is 0?"""
    correct = (T.predict_all(trigger.rows.features) == trigger.rows.labels[:, None]).all(axis=0)
    return correct == (np.array(sigma.bits) == 0)


# ---------------------------------------------------------------------------
# verification


@dataclass(frozen=True)
class TreeCheck:
    expected_correct: bool
    observed_correct: bool

    @property
    def ok(self) -> bool:
        return self.expected_correct == self.observed_correct


@dataclass(frozen=True)
class VerificationReport:
    matched: bool
    per_tree: tuple[TreeCheck, ...]
    disguise_size: int

    @property
    def mismatched(self) -> list[int]:
        return [i for i, c in enumerate(self.per_tree) if not c.ok]

    def to_dict(self) -> dict:
        return {"matched": self.matched, "disguise_size": self.disguise_size,
                "mismatched_trees": self.mismatched,
                "per_tree": [{"expected_correct": c.expected_correct, "observed_correct": c.observed_correct}
                             for c in self.per_tree]}


def make_disguise(trigger: TriggerSet, test: Dataset) -> Dataset:
    """Trigger rows mixed into a test set (ids must not collide)."""
    if set(trigger.origin_ids.tolist()) & set(test.ids.tolist()):
        raise DatasetError("trigger ids collide with test ids")
    return concat(trigger.rows, test)


def verify_watermark(model: Callable[[np.ndarray], np.ndarray], sigma: Signature, trigger: TriggerSet,
                     disguise: Dataset, seed: int = VERIFY_SEED) -> VerificationReport:
    """Query ``model`` once with every disguise row, shuffled, and check the trigger pattern.

    ``model`` maps an (n, d) batch to an (n, m) array of per-tree labels.
    """
    pos = disguise.positions(trigger.origin_ids)
    if not np.array_equal(disguise.features[pos], trigger.rows.features):
        raise DatasetError("trigger rows differ from the matching disguise rows")
    order = rng(seed, "verify").permutation(disguise.n)
    out = np.asarray(model(disguise.features[order]))
    if out.ndim != 2 or out.shape[0] != disguise.n or out.shape[1] != len(sigma):
        raise IncompatibleModel(f"model answered with shape {out.shape}, expected ({disguise.n}, {len(sigma)})")
    responses = np.empty_like(out)
    responses[order] = out
    observed = (responses[pos] == trigger.rows.labels[:, None]).all(axis=0)
    checks = tuple(TreeCheck(b == 0, bool(o)) for b, o in zip(sigma.bits, observed))
    return VerificationReport(all(c.ok for c in checks), checks, disguise.n)
