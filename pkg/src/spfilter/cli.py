"""Command-line entry points: ``train``, ``compare`` and ``demo``.

Exit codes: 0 on success, 2 for configuration errors, 3 when a run aborts.
"""

from __future__ import annotations

import argparse
import copy
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as C
from .filters import STRATEGY_NAMES, FilterStrategy
from .metrics import format_value
from .mixture import FAMILIES
from .trainer import CONFIDENCE, LOSS, SNAPSHOT_COLUMNS, TrainingAborted, run_training, save_run

log = logging.getLogger("spfilter")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORTED = 3

OUTPUT_ROOT_ENV = "SPFILTER_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"

SUMMARY_COLUMNS = ["strategy", "runs", "failed", "mean_test_error", "std_test_error"]
RUNS_COLUMNS = ["run", "strategy", "seed", "status", "final_test_error"]

FAILURE_LR = 5e-3
SNAPSHOT_FRACTIONS = (0.005, 0.05, 0.25, 0.5, 1.0)

# flag -> (config path, converter)
OVERRIDES = {
    "seed": ("seed", int),
    "tau": ("strategy.tau", float),
    "lam": ("train.lambda", float),
    "epochs": ("train.epochs", int),
    "lr": ("train.lr", float),
    "meta_family": ("train.meta_family", str),
    "meta_feature": ("train.meta_feature", str),
    "meta_every": ("train.meta_update_every", int),
}


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or DEFAULT_OUTPUT_ROOT)


def _raw_document(args) -> dict:
    return C.read_document(args.config) if args.config else {}


def apply_overrides(doc: dict, args) -> dict:
    """Fold command-line flags into a raw config document."""
    doc = copy.deepcopy(doc)
    if getattr(args, "strategy", None):
        # a new strategy starts from its own defaults
        doc["strategy"] = {"name": args.strategy}
    for flag, (path, conv) in OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            C.set_value(doc, path, conv(value))
    if getattr(args, "out", None):
        doc["out"] = str(args.out)
    return doc


def execute(resolved: dict, out_dir) -> tuple[float | None, str | None]:
    """Run one resolved config and persist it into ``out_dir``.

    Returns ``(final_test_error, abort_message)``. Partial results of an
    aborted run are written too.
    """
    cfg = C.build_train_config(resolved)
    dataset, truth = C.build_dataset(resolved)
    try:
        result = run_training(cfg, dataset, truth)
    except TrainingAborted as exc:
        save_run(exc.result, out_dir, resolved)
        return exc.result.final_test_error, exc.result.aborted
    save_run(result, out_dir, resolved)
    return result.final_test_error, None


def _run_cell(job):
    resolved, out_dir = job
    try:
        err, aborted = execute(resolved, out_dir)
    except Exception as exc:  # recorded per cell, the comparison continues
        return None, f"failed: {exc}"
    return err, aborted


def run_many(jobs: list, n_workers: int) -> list:
    """Run ``(resolved, out_dir)`` jobs, in parallel across processes when asked."""
    if n_workers <= 1 or len(jobs) <= 1:
        return [_run_cell(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(n_workers, len(jobs))) as pool:
        return list(pool.map(_run_cell, jobs))


def cmd_train(args) -> int:
    doc = C.resolve(apply_overrides(_raw_document(args), args))
    out_dir = Path(doc["out"]) if doc["out"] else \
        output_root() / f"train-{doc['strategy']['name']}-seed{doc['seed']}"
    doc["out"] = str(out_dir)
    err, aborted = execute(doc, out_dir)
    print(f"run directory: {out_dir}")
    if aborted:
        print(f"run aborted: {aborted}", file=sys.stderr)
        return EXIT_ABORTED
    print(f"final test error: {format_value(err)}")
    return EXIT_OK


def _parse_list(text: str, conv, what: str) -> list:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise C.ConfigError(f"need at least one {what}")
    try:
        return [conv(t) for t in items]
    except ValueError as exc:
        raise C.ConfigError(f"bad {what} list {text!r}: {exc}") from exc


def summarize_matrix(strategies: list, cells: list) -> list[dict]:
    """One summary row per listed strategy from ``(strategy, error_or_None)`` cells."""
    rows = []
    for name in strategies:
        errs = [e for s, e in cells if s == name and e is not None]
        failed = sum(1 for s, e in cells if s == name and e is None)
        rows.append({
            "strategy": name,
            "runs": len(errs) + failed,
            "failed": failed,
            "mean_test_error": float(np.mean(errs)) if errs else None,
            # population std over the seeds that finished
            "std_test_error": float(np.std(errs)) if errs else None,
        })
    return rows


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([row[c] if isinstance(row[c], str) else format_value(row[c]) for c in columns])


def cmd_compare(args) -> int:
    base = _raw_document(args)
    strategies = _parse_list(args.strategies, str, "strategy")
    seeds = _parse_list(args.seeds, int, "seed")
    out_root = Path(args.out) if args.out else output_root() / "compare"
    args.out = None
    jobs, meta = [], []
    for name in strategies:
        for seed in seeds:
            raw = apply_overrides(base, args)
            if name != raw.get("strategy", {}).get("name"):
                raw["strategy"] = {"name": name}
                if args.tau is not None and FilterStrategy.from_name(name).tau is not None:
                    raw["strategy"]["tau"] = args.tau
            raw["seed"] = seed
            run_dir = out_root / f"{len(jobs):02d}-{name}-seed{seed}"
            raw["out"] = str(run_dir)
            jobs.append((C.resolve(raw), run_dir))
            meta.append((run_dir.name, name, seed))
    out_root.mkdir(parents=True, exist_ok=True)
    results = run_many(jobs, args.jobs)
    run_rows, cells = [], []
    for (run, name, seed), (err, problem) in zip(meta, results):
        ok = problem is None
        run_rows.append({"run": run, "strategy": name, "seed": seed,
                         "status": "ok" if ok else problem, "final_test_error": err})
        cells.append((name, err if ok else None))
    summary = summarize_matrix(strategies, cells)
    _write_csv(out_root / "runs.csv", RUNS_COLUMNS, run_rows)
    _write_csv(out_root / "summary.csv", SUMMARY_COLUMNS, summary)
    print(f"{'strategy':<16} {'runs':>4} {'failed':>6}  test error")
    for row in summary:
        if row["mean_test_error"] is None:
            cell = "n/a"
        else:
            cell = f"{row['mean_test_error']:.4f} +- {row['std_test_error']:.4f}"
        print(f"{row['strategy']:<16} {row['runs']:>4} {row['failed']:>6}  {cell}")
    print(f"summary: {out_root / 'summary.csv'}")
    return EXIT_OK


def snapshot_epochs(epochs: int) -> list[int]:
    return sorted({max(1, round(f * epochs)) for f in SNAPSHOT_FRACTIONS})


def demo_jobs(name: str, seed: int, epochs: int | None, out_root: Path) -> list:
    """Resolved configs and run directories for a named preset."""
    base = {"seed": seed, "train": {}}
    if epochs is not None:
        base["train"]["epochs"] = epochs
    n_epochs = epochs if epochs is not None else C.default_document()["train"]["epochs"]
    jobs = []
    if name in ("two-moons", "two-moons-failure"):
        for strategy in ("spf", "cct"):
            raw = copy.deepcopy(base)
            raw["strategy"] = {"name": strategy}
            raw["train"]["snapshot_epochs"] = snapshot_epochs(n_epochs)
            if name == "two-moons-failure":
                raw["train"]["lr"] = FAILURE_LR
            raw["out"] = str(out_root / strategy)
            jobs.append((C.resolve(raw), out_root / strategy))
    elif name == "meta-auroc":
        raw = copy.deepcopy(base)
        raw["train"]["meta_diagnostics"] = True
        raw["out"] = str(out_root / "spf")
        jobs.append((C.resolve(raw), out_root / "spf"))
    else:
        raise C.ConfigError(f"unknown demo {name!r}; choose from {', '.join(DEMOS)}")
    return jobs


DEMOS = ("two-moons", "two-moons-failure", "meta-auroc")


def _join_snapshots(out_root: Path, strategies):
    """Concatenate per-run weight snapshots with a leading strategy column."""
    with open(out_root / "snapshots.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["strategy", *SNAPSHOT_COLUMNS])
        for strategy in strategies:
            with open(out_root / strategy / "weights_snapshots.csv", newline="") as src:
                rows = csv.reader(src)
                next(rows)
                for row in rows:
                    w.writerow([strategy, *row])


def cmd_demo(args) -> int:
    if args.name not in DEMOS:
        raise C.ConfigError(f"unknown demo {args.name!r}; choose from {', '.join(DEMOS)}")
    out_root = Path(args.out) if args.out else output_root() / args.name
    jobs = demo_jobs(args.name, args.seed if args.seed is not None else 0, args.epochs, out_root)
    results = run_many(jobs, args.jobs)
    status = EXIT_OK
    for (doc, run_dir), (err, problem) in zip(jobs, results):
        print(f"{run_dir}: final test error {format_value(err)}")
        if problem is not None:
            print(f"{run_dir}: {problem}", file=sys.stderr)
            status = EXIT_ABORTED
    if args.name != "meta-auroc" and status == EXIT_OK:
        _join_snapshots(out_root, [Path(d).name for _, d in jobs])
        print(f"snapshots: {out_root / 'snapshots.csv'}")
    return status


def _add_run_flags(p: argparse.ArgumentParser, strategy=True):
    p.add_argument("--config", help="JSON run config (defaults: two-moons SPF)")
    p.add_argument("--seed", type=int)
    if strategy:
        p.add_argument("--strategy", choices=sorted(STRATEGY_NAMES))
    p.add_argument("--tau", type=float, help="confidence threshold for cct / ctr")
    p.add_argument("--lambda", dest="lam", type=float, help="unsupervised loss weight")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--meta-family", choices=FAMILIES)
    p.add_argument("--meta-feature", choices=(CONFIDENCE, LOSS))
    p.add_argument("--meta-every", type=int, help="epochs between meta-model fits")
    p.add_argument("--out", help=f"output directory (default under ${OUTPUT_ROOT_ENV} or ./runs)")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spfilter",
                                     description="Semi-supervised training with self-adaptive pseudo-label filtering.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one configuration")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="run a strategy x seed matrix and summarize")
    _add_run_flags(p, strategy=False)
    p.add_argument("--strategies", default="spf,cct", help="comma-separated strategy names")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("demo", help="run a named preset")
    p.add_argument("name", help=", ".join(DEMOS))
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
