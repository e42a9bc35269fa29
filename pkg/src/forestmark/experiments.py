"""Experiment building blocks shared by the CLI, the scripts and the acceptance tests."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import attacks
from .dataset import Dataset, load_csv, load_libsvm, normalize_minmax, train_test_split, trigger_size
from .forest import Ensemble, HyperParams, accuracy, train_forest
from .seeding import derive_seed
from .watermark import Signature, WatermarkArtifacts, embed_watermark

K_SWEEP = (0.005, 0.01, 0.02, 0.04, 0.08)
ONES_SWEEP = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def load_dataset(path, fmt: str = "csv", label_column: str = "label") -> Dataset:
    if fmt == "csv":
        return load_csv(path, label_column)
    if fmt == "libsvm":
        return load_libsvm(path)
    raise ValueError(f"unknown dataset format {fmt!r}")


def prepare(data: Dataset, split_seed: int, test_frac: float = 0.2) -> tuple[Dataset, Dataset]:
    """Stratified split, then min-max scaling fitted on the training side."""
    train, test = train_test_split(data, test_frac, split_seed)
    train = normalize_minmax(train)
    return train, normalize_minmax(test, train.norm)


@dataclass
class Trial:
    seed: int
    k: int
    ones_frac: float
    baseline_acc: float
    watermarked_acc: float
    artifacts: WatermarkArtifacts = field(repr=False)
    seconds: float = 0.0

    @property
    def drop(self) -> float:
        return 100 * (self.baseline_acc - self.watermarked_acc)

    def row(self) -> dict:
        a = self.artifacts
        return {"seed": self.seed, "k": self.k, "ones_frac": self.ones_frac,
                "baseline_acc": self.baseline_acc, "watermarked_acc": self.watermarked_acc,
                "drop_points": self.drop, "rounds_T0": a.rounds_T0, "rounds_T1": a.rounds_T1,
                "max_depth": a.adjusted_hp.max_depth, "max_leaves": a.adjusted_hp.max_leaves}


def baseline_forest(train: Dataset, hp: HyperParams, seed: int) -> Ensemble:
    return train_forest(train, None, replace(hp, seed=derive_seed(seed, "baseline")))


def watermark_trial(train: Dataset, test: Dataset, hp: HyperParams, m: int, k_frac: float,
                    ones_frac: float, seed: int, max_rounds: int = 200) -> Trial:
    t0 = time.monotonic()
    sigma = Signature.random(m, ones_frac, derive_seed(seed, "sigma"))
    k = trigger_size(train.n, k_frac)
    art = embed_watermark(train, m, sigma, k, seed, max_rounds, hp=hp)
    base = baseline_forest(train, replace(hp, m=m), seed)
    return Trial(seed, k, ones_frac, accuracy(base, test), accuracy(art.ensemble, test), art,
                 time.monotonic() - t0)


def accuracy_sweep(train: Dataset, test: Dataset, hp: HyperParams, m: int, param: str,
                   values: Sequence[float], seeds: Iterable[int], k_frac: float = 0.02,
                   ones_frac: float = 0.5) -> list[Trial]:
    """Watermark once per (value, seed), varying ``param`` in {"trigger", "ones"}."""
    if param not in ("trigger", "ones"):
        raise ValueError("sweep parameter must be 'trigger' or 'ones'")
    seeds = list(seeds)
    out = []
    for v in values:
        for s in seeds:
            kf, of = (v, ones_frac) if param == "trigger" else (k_frac, v)
            out.append(watermark_trial(train, test, hp, m, kf, of, s))
    return out


def summarize(trials: Sequence[Trial], key: str) -> list[dict]:
    groups: dict[float, list[Trial]] = {}
    for t in trials:
        groups.setdefault(t.k if key == "k" else t.ones_frac, []).append(t)
    rows = []
    for v, ts in groups.items():
        rows.append({key: v, "runs": len(ts),
                     "baseline_acc": float(np.mean([t.baseline_acc for t in ts])),
                     "watermarked_acc": float(np.mean([t.watermarked_acc for t in ts])),
                     "mean_drop_points": float(np.mean([t.drop for t in ts]))})
    return rows


def detection_reports(T: Ensemble, sigma: Signature | None = None) -> list[attacks.DetectionReport]:
    return [fn(T, stat, sigma) for fn in (attacks.detect_band, attacks.detect_mean)
            for stat in ("depth", "leaves")]


def bit_accuracy(report: attacks.DetectionReport, sigma: Signature) -> float:
    """Fraction of all bits guessed right (uncertain bits count as wrong)."""
    return report.correct / len(sigma)


def forgery_sweep(T: Ensemble, test: Dataset, k_original: int, epsilons: Sequence[float],
                  fakes: Sequence[Signature], per_instance_budget: int = attacks.DEFAULT_NODE_BUDGET,
                  wall_clock_budget: float | None = None) -> list[tuple[float, int, attacks.ForgeryResult]]:
    index = attacks.LeafIndex(T)
    out = []
    for j, fake in enumerate(fakes):
        for eps in epsilons:
            res = attacks.forge_trigger_set(T, fake, test, eps, k_original, per_instance_budget,
                                            wall_clock_budget, index=index)
            out.append((eps, j, res))
    return out


def forgery_summary_row(eps: float, j: int, res: attacks.ForgeryResult) -> dict:
    return {"epsilon": eps, "signature": j, "ratio": res.ratio, "forged": len(res.forged),
            "infeasible": res.infeasible, "timeout": res.timeouts, "attempted": res.attempted,
            "complete": res.complete}
