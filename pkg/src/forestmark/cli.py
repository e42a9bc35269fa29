"""Command-line experiment harness.

Exit codes: 0 success / verified, 1 verification mismatch, 2 input error,
3 non-convergence (or solver timeout in ``reduce``), 4 incompatible model.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import attacks, experiments
from .dataset import Dataset, DatasetError, load_csv, load_trigger_csv, save_csv, save_trigger_csv, trigger_size
from .forest import HyperParams, accuracy, grid_search, load_model, save_model
from .reduction import DimacsError, ForgeryTimeout, convert_formula, format_solution, parse_dimacs, sat_via_forgery
from .seeding import derive_seed
from .watermark import (VERIFY_SEED, IncompatibleModel, NonConvergence, Signature, embed_watermark, load_signature,
                        make_disguise, save_signature, verify_watermark)

EXIT_OK, EXIT_MISMATCH, EXIT_INPUT, EXIT_NONCONVERGENCE, EXIT_INCOMPATIBLE = 0, 1, 2, 3, 4


class Run:
    """Output directory with a lock file and a manifest of stages and artifacts."""

    def __init__(self, out: Path, config: dict):
        self.out = out
        self.config = config
        self.stages: dict[str, float] = {}
        self.seeds: dict[str, int] = {}
        self.artifacts: list[str] = []

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.config, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    @contextmanager
    def stage(self, name: str):
        t0 = time.monotonic()
        try:
            yield
        finally:
            self.stages[name] = round(time.monotonic() - t0, 3)

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def write_manifest(self) -> None:
        manifest = {"config_hash": self.config_hash, "config": self.config, "seeds": self.seeds,
                    "artifacts": sorted(set(self.artifacts)), "seconds": self.stages}
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=1, default=str) + "\n")


@contextmanager
def open_run(out: str, args: argparse.Namespace):
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    lock = path / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DatasetError(f"{path} is locked by another run (remove {lock} if stale)") from None
    os.close(fd)
    config = {k: v for k, v in vars(args).items() if k not in ("func", "out")}
    run = Run(path, config)
    try:
        yield run
        run.write_manifest()
    finally:
        lock.unlink(missing_ok=True)


def write_csv(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=str) + "\n")


def _hp_dict(hp: HyperParams) -> dict:
    return asdict(hp)


def _load_split(args, run: Run) -> tuple[Dataset, Dataset]:
    data = experiments.load_dataset(args.dataset, args.format, args.label_column)
    split_seed = args.split_seed if args.split_seed is not None else derive_seed(args.seed, "split")
    run.seeds["split"] = split_seed
    return experiments.prepare(data, split_seed)


def _search(args, run: Run, train: Dataset) -> HyperParams:
    if args.max_depth is not None or args.min_samples_leaf is not None:
        return HyperParams(m=args.m, max_depth=args.max_depth, min_samples_leaf=args.min_samples_leaf or 1,
                           seed=derive_seed(args.seed, "grid"))
    run.seeds["grid"] = derive_seed(args.seed, "grid")
    with run.stage("grid_search"):
        return grid_search(train, args.m, None, args.folds, seed=run.seeds["grid"])


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    with open_run(args.out, args) as run:
        train, test = _load_split(args, run)
        hp = _search(args, run, train)
        with run.stage("train"):
            model = experiments.baseline_forest(train, hp, args.seed)
        run.seeds["baseline"] = derive_seed(args.seed, "baseline")
        save_model(model, run.path("model.json"))
        save_csv(train, run.path("train.csv"))
        save_csv(test, run.path("test.csv"))
        report = {"train_accuracy": accuracy(model, train), "test_accuracy": accuracy(model, test),
                  "hyperparams": _hp_dict(hp), "n_train": train.n, "n_test": test.n}
        write_json(run.path("report.json"), report)
        print(json.dumps(report, indent=1, default=str))
    return EXIT_OK


def _signature(args, m: int) -> Signature:
    if args.sigma_file:
        sigma = load_signature(args.sigma_file)
        if len(sigma) != m:
            raise DatasetError(f"signature file has {len(sigma)} bits, --m is {m}")
        return sigma
    return Signature.random(m, args.ones_frac, derive_seed(args.seed, "sigma"))


def cmd_watermark(args) -> int:
    with open_run(args.out, args) as run:
        train, test = _load_split(args, run)
        hp = _search(args, run, train)
        sigma = _signature(args, args.m)
        k = trigger_size(train.n, args.trigger_frac)
        try:
            with run.stage("embed"):
                art = embed_watermark(train, args.m, sigma, k, args.seed, args.max_rounds, hp=hp)
        except NonConvergence as exc:
            print(f"error: {exc}", file=sys.stderr)
            write_json(run.path("report.json"), {"error": "non-convergence", "rounds": exc.rounds,
                                                 "failing_trees": exc.failing_trees,
                                                 "failing_rows": exc.failing_rows})
            return EXIT_NONCONVERGENCE
        with run.stage("baseline"):
            base = experiments.baseline_forest(train, hp, args.seed)
        save_model(art.ensemble, run.path("model.json"))
        save_signature(sigma, run.path("signature.txt"))
        save_trigger_csv(art.trigger, run.path("trigger.csv"))
        save_csv(test, run.path("test.csv"))
        base_acc, wm_acc = accuracy(base, test), accuracy(art.ensemble, test)
        report = {"k": k, "m": args.m, "ones": sigma.m - sigma.zeros,
                  "rounds_T0": art.rounds_T0, "rounds_T1": art.rounds_T1,
                  "search_hyperparams": _hp_dict(hp), "adjusted_hyperparams": _hp_dict(art.adjusted_hp),
                  "baseline_test_accuracy": base_acc, "watermarked_test_accuracy": wm_acc,
                  "accuracy_delta_points": 100 * (wm_acc - base_acc)}
        write_json(run.path("report.json"), report)
        print(json.dumps(report, indent=1, default=str))
    return EXIT_OK


def cmd_verify(args) -> int:
    model = load_model(args.model)
    sigma = load_signature(args.sigma_file)
    trigger = load_trigger_csv(args.trigger)
    test = load_csv(args.test)
    if set(test.ids.tolist()) & set(trigger.origin_ids.tolist()):
        # test file without usable ids: renumber past the trigger ids
        start = int(trigger.origin_ids.max(initial=-1)) + 1
        test = Dataset(test.features, test.labels, start + np.arange(test.n), test.feature_names)
    disguise = make_disguise(trigger, test)

    def black_box(X):
        if X.shape[1] != model.d:
            raise IncompatibleModel(f"model expects {model.d} features, data has {X.shape[1]}")
        return model.predict_all(X)

    try:
        report = verify_watermark(black_box, sigma, trigger, disguise, seed=args.seed)
    except IncompatibleModel as exc:
        print(json.dumps({"error": "incompatible-model", "detail": str(exc)}))
        return EXIT_INCOMPATIBLE
    out = report.to_dict()
    if not args.full:
        out.pop("per_tree")
    print(json.dumps(out, indent=1))
    return EXIT_OK if report.matched else EXIT_MISMATCH


def cmd_detect(args) -> int:
    model = load_model(args.model)
    sigma = load_signature(args.sigma_file) if args.sigma_file else None
    if sigma is not None and len(sigma) != model.m:
        raise IncompatibleModel(f"signature has {len(sigma)} bits, model has {model.m} trees")
    with open_run(args.out, args) as run:
        rows = [r.row() for r in experiments.detection_reports(model, sigma)]
        write_csv(run.path("detection.csv"), rows)
    for r in rows:
        print(r)
    return EXIT_OK


def cmd_forge(args) -> int:
    model = load_model(args.model)
    test = load_csv(args.test)
    if test.d != model.d:
        raise IncompatibleModel(f"model expects {model.d} features, test data has {test.d}")
    if args.k is not None:
        k = args.k
    elif args.trigger:
        k = load_trigger_csv(args.trigger).k
    else:
        raise DatasetError("give --k or --trigger to size the original trigger set")
    with open_run(args.out, args) as run:
        fakes = [Signature.random(model.m, args.ones_frac, derive_seed(args.seed, "fake", j))
                 for j in range(args.signatures)]
        run.seeds["fakes"] = [derive_seed(args.seed, "fake", j) for j in range(args.signatures)]
        epsilons = sorted(args.epsilon)
        with run.stage("forge"):
            results = experiments.forgery_sweep(model, test, k, epsilons, fakes, args.budget_nodes,
                                                args.budget_secs)
        summary = []
        for eps, j, res in results:
            summary.append(experiments.forgery_summary_row(eps, j, res))
            rows = []
            for r in res.records:
                row = {"seed_row_id": r.seed_row_id, "status": r.status.value,
                       "linf_distance": "" if r.linf is None else repr(r.linf)}
                vals = r.instance.tolist() if r.instance is not None else [""] * model.d
                row.update({f"x{i}": (repr(v) if v != "" else "") for i, v in enumerate(vals)})
                rows.append(row)
            write_csv(run.path(f"forged_eps{eps:g}_sig{j}.csv"), rows)
        write_csv(run.path("forgery.csv"), summary)
    for row in summary:
        print(row)
    return EXIT_OK


def cmd_reduce(args) -> int:
    phi = parse_dimacs(args.dimacs)
    if args.model_out:
        save_model(convert_formula(phi), args.model_out)
    try:
        a = sat_via_forgery(phi, args.budget_nodes)
    except ForgeryTimeout:
        print("s UNKNOWN")
        return EXIT_NONCONVERGENCE
    sys.stdout.write(format_solution(a))
    return EXIT_OK


def cmd_eval(args) -> int:
    values = args.values or (experiments.K_SWEEP if args.sweep == "trigger" else experiments.ONES_SWEEP)
    with open_run(args.out, args) as run:
        train, test = _load_split(args, run)
        hp = _search(args, run, train)
        seeds = [derive_seed(args.seed, "eval", i) for i in range(args.runs)]
        run.seeds["runs"] = seeds
        try:
            with run.stage("sweep"):
                trials = experiments.accuracy_sweep(train, test, hp, args.m, args.sweep, values, seeds,
                                                    args.trigger_frac, args.ones_frac)
        except NonConvergence as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NONCONVERGENCE
        write_csv(run.path(f"sweep_{args.sweep}_runs.csv"), [t.row() for t in trials])
        summary = experiments.summarize(trials, "k" if args.sweep == "trigger" else "ones_frac")
        write_csv(run.path(f"sweep_{args.sweep}.csv"), summary)
    for row in summary:
        print(row)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True)
    p.add_argument("--format", choices=("csv", "libsvm"), default="csv")
    p.add_argument("--label-column", default="label")
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--max-depth", type=int, default=None, help="skip grid search and use this depth")
    p.add_argument("--min-samples-leaf", type=int, default=None, help="skip grid search and use this value")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forestmark", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="baseline forest with grid search")
    _data_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("watermark", parents=[common], help="embed a signature")
    _data_flags(p)
    p.add_argument("--trigger-frac", type=float, default=0.02)
    p.add_argument("--ones-frac", type=float, default=0.5)
    p.add_argument("--sigma-file")
    p.add_argument("--max-rounds", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_watermark)

    p = sub.add_parser("verify", help="black-box ownership check")
    p.add_argument("--seed", type=int, default=VERIFY_SEED, help="query shuffling seed")
    p.add_argument("--model", required=True)
    p.add_argument("--sigma-file", required=True)
    p.add_argument("--trigger", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--full", action="store_true", help="print the per-tree records too")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("attack", help="detection and forgery attacks")
    attack = p.add_subparsers(dest="mode", required=True)
    d = attack.add_parser("detect", parents=[common])
    d.add_argument("--model", required=True)
    d.add_argument("--sigma-file", help="ground-truth signature for scoring")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_detect)
    f = attack.add_parser("forge", parents=[common])
    f.add_argument("--model", required=True)
    f.add_argument("--test", required=True)
    f.add_argument("--trigger", help="original trigger file (only its size is used)")
    f.add_argument("--k", type=int)
    f.add_argument("--epsilon", type=float, nargs="+", default=[0.1, 0.3, 0.5, 0.7, 0.9])
    f.add_argument("--signatures", type=int, default=5)
    f.add_argument("--ones-frac", type=float, default=0.5)
    f.add_argument("--budget-nodes", type=int, default=attacks.DEFAULT_NODE_BUDGET)
    f.add_argument("--budget-secs", type=float, default=None, help="wall-clock budget per (signature, epsilon)")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_forge)

    p = sub.add_parser("reduce", help="decide a 3CNF formula via forgery")
    p.add_argument("dimacs")
    p.add_argument("--model-out", help="write the converted ensemble here")
    p.add_argument("--budget-nodes", type=int, default=attacks.DEFAULT_NODE_BUDGET)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("eval", parents=[common], help="accuracy sweeps over trigger size or ones fraction")
    _data_flags(p)
    p.add_argument("--sweep", choices=("trigger", "ones"), default="trigger")
    p.add_argument("--values", type=float, nargs="+")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--trigger-frac", type=float, default=0.02)
    p.add_argument("--ones-frac", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except IncompatibleModel as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except (DatasetError, DimacsError, ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
