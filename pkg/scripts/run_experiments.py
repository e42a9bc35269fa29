"""Breast-cancer experiments: accuracy sweeps, detection table, forgery curves.

    python scripts/run_experiments.py --out results [--runs 10] [--m 100]

Writes one CSV per experiment into ``--out``. One grid search on a fixed
split is shared by every run; each run gets its own root seed.
"""

import argparse
import csv
import time
from pathlib import Path

import numpy as np

from forestmark.dataset import load_csv
from forestmark.experiments import (
    K_SWEEP, ONES_SWEEP, accuracy_sweep, bit_accuracy, detection_reports, forgery_summary_row,
    forgery_sweep, prepare, summarize,
)
from forestmark.forest import grid_search
from forestmark.seeding import derive_seed
from forestmark.watermark import Signature

ROOT = Path(__file__).resolve().parents[1]


def write(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {path}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dataset", default=str(ROOT / "data" / "breast_cancer.csv"))
    ap.add_argument("--out", default="results")
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--m", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--skip-ones", action="store_true", help="skip the ones-fraction sweep")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = prepare(load_csv(args.dataset), split_seed=args.seed)
    t0 = time.monotonic()
    hp = grid_search(train, args.m, seed=derive_seed(args.seed, "grid"))
    print(f"grid search: depth={hp.max_depth} min_samples_leaf={hp.min_samples_leaf} "
          f"({time.monotonic() - t0:.0f}s)")
    seeds = [derive_seed(args.seed, "run", i) for i in range(args.runs)]

    trials = accuracy_sweep(train, test, hp, args.m, "trigger", K_SWEEP, seeds)
    write(out / "sweep_trigger_runs.csv", [t.row() for t in trials])
    write(out / "sweep_trigger.csv", summarize(trials, "k"))

    if not args.skip_ones:
        ones = accuracy_sweep(train, test, hp, args.m, "ones", ONES_SWEEP, seeds)
        write(out / "sweep_ones_runs.csv", [t.row() for t in ones])
        write(out / "sweep_ones.csv", summarize(ones, "ones_frac"))

    i = K_SWEEP.index(0.02)  # sweeps run value-major, so each value's runs are contiguous
    k2 = trials[i * len(seeds):(i + 1) * len(seeds)]
    rows = []
    for t in k2:
        for rep in detection_reports(t.artifacts.ensemble, t.artifacts.signature):
            rows.append({"seed": t.seed, **rep.row(), "bit_accuracy": bit_accuracy(rep, t.artifacts.signature)})
    write(out / "detection.csv", rows)

    art = k2[0].artifacts
    rows = []
    for ones_frac in (0.5, 0.02):
        fakes = [Signature.random(args.m, ones_frac, derive_seed(args.seed, "fake", ones_frac, j)) for j in range(5)]
        for eps, j, res in forgery_sweep(art.ensemble, test, art.trigger.k, (0.1, 0.3, 0.5, 0.7, 0.9), fakes):
            rows.append({"fake_ones_frac": ones_frac, **forgery_summary_row(eps, j, res)})
    write(out / "forgery.csv", rows)
    print(f"mean forged ratio at eps=0.9, random fakes: "
          f"{np.mean([r['ratio'] for r in rows if r['epsilon'] == 0.9 and r['fake_ones_frac'] == 0.5]):.3f}")


if __name__ == "__main__":
    main()
