"""Command-line front end: synth, train, eval, bound, sweep.

All machine-readable outputs are JSON or CSV and byte-stable under identical
inputs and seeds; figures are SVG files rendered next to their CSV
companions. Exit codes: 0 success, 2 argument errors, 3 I/O problems,
4 numeric aborts, 5 invalid bound regime.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, plots
from .confusion import class_weights
from .data import (
    LabeledDataset,
    dataset_summary,
    export_csv,
    ingest_csv,
    make_longtail_subset,
    synth_longtail_gaussians,
)
from .errors import (
    CarlabError,
    IngestionError,
    InvalidRegimeError,
    NumericError,
    ParameterError,
)
from .model import init_mlp, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, train

EXIT_OK = 0
EXIT_ARGS = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_REGIME = 5

_QUIET = False


def _echo(msg: str) -> None:
    if not _QUIET:
        print(msg)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _load_spec(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    for block in ("dataset", "model", "train"):
        if block not in spec:
            raise ParameterError(f"experiment spec is missing the {block!r} block")
    return spec


def _dataset_from_block(block: dict) -> LabeledDataset:
    if "synthetic" in block:
        syn = dict(block["synthetic"])
        return synth_longtail_gaussians(
            k=int(syn["k"]),
            d=int(syn["d"]),
            n_max=int(syn["n_max"]),
            imbalance_factor=float(syn.get("imbalance_factor", 1.0)),
            cluster_spread=float(syn.get("cluster_spread", 0.5)),
            seed=int(syn.get("seed", 0)),
            mean_seed=syn.get("mean_seed"),
        )
    if "csv" in block:
        ds = ingest_csv(block["csv"])
        if "imbalance_factor" in block:
            ds = make_longtail_subset(
                ds,
                float(block["imbalance_factor"]),
                int(block.get("subset_seed", 0)),
            )
        return ds
    raise ParameterError("dataset block needs either 'synthetic' or 'csv'")


def _spec_datasets(spec: dict) -> tuple[LabeledDataset, LabeledDataset | None]:
    block = spec["dataset"]
    train_ds = _dataset_from_block(block)
    test_ds = _dataset_from_block(block["test"]) if "test" in block else None
    return train_ds, test_ds


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    ds = synth_longtail_gaussians(
        k=args.k,
        d=args.d,
        n_max=args.n_max,
        imbalance_factor=args.imbalance_factor,
        cluster_spread=args.spread,
        seed=args.seed or 0,
        mean_seed=args.mean_seed,
    )
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    export_csv(ds, out / "dataset.csv")
    _write_json(out / "profile.json", dataset_summary(ds))
    _write_json(
        out / "seed.json",
        {
            "command": "synth",
            "k": args.k,
            "d": args.d,
            "n_max": args.n_max,
            "imbalance_factor": args.imbalance_factor,
            "cluster_spread": args.spread,
            "seed": args.seed or 0,
            "mean_seed": args.mean_seed,
        },
    )
    _echo(f"wrote {ds.m} samples across {ds.k} classes to {out / 'dataset.csv'}")
    return EXIT_OK


def _train_once(spec: dict, out_dir: Path, seed_override: int | None):
    train_ds, _ = _spec_datasets(spec)
    cfg = TrainConfig.from_dict(spec.get("train", {}))
    if seed_override is not None:
        cfg.seed = seed_override
    mblock = spec["model"]
    model = init_mlp(
        n=int(mblock["n"]),
        h=int(mblock["h"]),
        d=train_ds.d,
        k=train_ds.k,
        seed=int(mblock.get("init_seed", 0)),
    )
    trained, history, ema = train(cfg, model, train_ds)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec_effective = dict(spec)
    spec_effective["train"] = cfg.to_dict()
    _write_json(out_dir / "spec.json", spec_effective)
    save_checkpoint(trained, out_dir / "checkpoint.carm")
    history.write_csv(out_dir / "history.csv")
    last_epoch = history.epochs[-1] if history.epochs else None
    summary = {
        "config": cfg.to_dict(),
        "dataset": dataset_summary(train_ds),
        "regularizer_on": bool(cfg.regularizer_on and cfg.alpha > 0),
        "steps": len(history.steps),
        "final_overall_train_accuracy": (
            last_epoch.overall_accuracy if last_epoch else None
        ),
        "final_worst_class_train_accuracy": (
            min(a for a in last_epoch.per_class_accuracy if not np.isnan(a))
            if last_epoch
            else None
        ),
        "final_reg_value": last_epoch.reg_snapshot if last_epoch else None,
    }
    _write_json(out_dir / "summary.json", summary)
    return trained, history, train_ds, summary


def cmd_train(args) -> int:
    spec = _load_spec(args.spec)
    out_dir = Path(args.out or spec.get("output_dir", "run"))
    try:
        _train_once(spec, out_dir, args.seed)
    except NumericError as exc:
        history = getattr(exc, "history", None)
        last_good = len(history.steps) if history is not None else 0
        out_dir.mkdir(parents=True, exist_ok=True)
        if history is not None:
            history.write_csv(out_dir / "history.csv")
        _write_json(
            out_dir / "abort.json",
            {"error": str(exc), "failed_step": exc.step, "last_good_step": last_good},
        )
        raise
    _echo(f"run directory: {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds = ingest_csv(args.dataset)
    train_ds = ingest_csv(args.train_dataset) if args.train_dataset else None
    weight_source = train_ds if train_ds is not None else ds
    if weight_source.k != ds.k:
        raise ParameterError(
            f"train dataset has {weight_source.k} classes, eval dataset {ds.k}"
        )
    weights = class_weights(weight_source.frequencies(), args.weights_r0)
    split_counts = train_ds.class_counts if train_ds is not None else None
    report = analysis.evaluate(
        model,
        ds,
        weights,
        head_min=args.head_min,
        tail_max=args.tail_max,
        split_counts=split_counts,
    )
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_json_dict()
    if train_ds is not None:
        train_report = analysis.evaluate(
            model, train_ds, weights, head_min=args.head_min, tail_max=args.tail_max
        )
        payload["worst_class_ratio"] = analysis.worst_class_report(
            train_report, report
        ).to_json_dict()
    _write_json(out / "metrics.json", payload)
    rng = np.random.Generator(np.random.PCG64(args.seed or 0))
    subset = np.sort(rng.choice(ds.k, size=min(10, ds.k), replace=False))
    svg, csv = analysis.heatmap_export(report.confusion, subset, out / "heatmap.svg")
    _echo(f"metrics: {out / 'metrics.json'}; heatmap: {svg}")
    return EXIT_OK


def cmd_bound(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds = ingest_csv(args.dataset)
    weights = class_weights(ds.frequencies(), args.weights_r0)
    report = analysis.bound_eval(model, ds, args.gamma, args.delta, weights)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "bound.json", report.to_json_dict())
    _echo(f"bound report: {out / 'bound.json'}")
    return EXIT_OK


SWEEPABLE = ("beta", "r0", "alpha", "gamma")


def _sweep_one(spec: dict, param: str, value: float, seed_override: int | None):
    """Worker for one sweep grid point; runs in its own process."""
    spec = json.loads(json.dumps(spec))
    spec.setdefault("train", {})[param] = value
    train_ds, test_ds = _spec_datasets(spec)
    cfg = TrainConfig.from_dict(spec["train"])
    if seed_override is not None:
        cfg.seed = seed_override
    mblock = spec["model"]
    model = init_mlp(
        n=int(mblock["n"]),
        h=int(mblock["h"]),
        d=train_ds.d,
        k=train_ds.k,
        seed=int(mblock.get("init_seed", 0)),
    )
    trained, _, _ = train(cfg, model, train_ds)
    weights = class_weights(train_ds.frequencies(), cfg.r0)
    target = test_ds if test_ds is not None else train_ds
    report = analysis.evaluate(
        trained, target, weights, split_counts=train_ds.class_counts
    )
    return report.overall_accuracy, report.worst_class_accuracy


def cmd_sweep(args) -> int:
    spec = _load_spec(args.spec)
    if args.param not in SWEEPABLE:
        raise ParameterError(f"sweep parameter must be one of {SWEEPABLE}")
    try:
        values = [float(tok) for tok in args.values.split(",") if tok.strip()]
    except ValueError as exc:
        raise ParameterError(f"bad sweep values: {exc}")
    if not values or not all(np.isfinite(values)):
        raise ParameterError("sweep needs a non-empty list of finite values")
    max_workers = int(os.environ.get("CAR_THREADS", "0")) or min(
        len(values), os.cpu_count() or 1
    )
    max_workers = max(1, min(max_workers, len(values)))
    results: dict[float, tuple] = {}
    if max_workers == 1:
        for v in values:
            try:
                results[v] = ("ok", *_sweep_one(spec, args.param, v, args.seed))
            except Exception as exc:  # keep sweeping past per-run failures
                results[v] = ("error: " + str(exc), None, None)
    else:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            futures = {
                v: pool.submit(_sweep_one, spec, args.param, v, args.seed)
                for v in values
            }
            for v, fut in futures.items():
                try:
                    results[v] = ("ok", *fut.result())
                except Exception as exc:
                    results[v] = ("error: " + str(exc), None, None)
    out = Path(args.out or spec.get("output_dir", "sweep"))
    out.mkdir(parents=True, exist_ok=True)
    def fmt(x):
        return "" if x is None else f"{x:.17g}"

    lines = [f"{args.param},overall_accuracy,worst_class_accuracy,status"]
    for v in values:
        status, overall, worst = results[v]
        lines.append(f"{v:.17g},{fmt(overall)},{fmt(worst)},{status}")
    csv_path = out / "sweep.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    ok = [v for v in values if results[v][0] == "ok"]
    for metric, idx in (("overall_accuracy", 1), ("worst_class_accuracy", 2)):
        plots.render_line_plot(
            ok,
            [results[v][idx] for v in ok],
            xlabel=args.param,
            ylabel=metric.replace("_", " "),
            path=out / f"sweep_{metric}.svg",
        )
    _echo(f"sweep results: {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override run seeds")
    common.add_argument("--out", type=str, default=None, help="output directory")
    common.add_argument("--quiet", action="store_true", help="suppress progress text")
    parser = argparse.ArgumentParser(
        prog="carlab",
        description="Confusion-aware spectral regularization lab",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_command(name, help_text):
        return sub.add_parser(name, help=help_text, parents=[common])

    p = add_command("synth", "synthesize a long-tailed Gaussian dataset")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--n-max", type=int, required=True, dest="n_max")
    p.add_argument("--if", type=float, required=True, dest="imbalance_factor")
    p.add_argument("--spread", type=float, default=0.5)
    p.add_argument("--mean-seed", type=int, default=None, dest="mean_seed")
    p.set_defaults(func=cmd_synth)

    p = add_command("train", "train per an experiment spec JSON")
    p.add_argument("spec", type=str)
    p.set_defaults(func=cmd_train)

    p = add_command("eval", "metrics report for a checkpoint on a dataset")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--dataset", type=str, required=True)
    p.add_argument("--train-dataset", type=str, default=None, dest="train_dataset")
    p.add_argument("--weights-r0", type=float, default=0.2, dest="weights_r0")
    p.add_argument("--head-min", type=int, default=100, dest="head_min")
    p.add_argument("--tail-max", type=int, default=20, dest="tail_max")
    p.set_defaults(func=cmd_eval)

    p = add_command("bound", "per-class generalization bound report")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--dataset", type=str, required=True)
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--weights-r0", type=float, default=0.2, dest="weights_r0")
    p.set_defaults(func=cmd_bound)

    p = add_command("sweep", "train/eval across one hyperparameter")
    p.add_argument("spec", type=str)
    p.add_argument("--param", type=str, required=True, choices=SWEEPABLE)
    p.add_argument("--values", type=str, required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    global _QUIET
    parser = build_parser()
    args = parser.parse_args(argv)
    _QUIET = args.quiet
    try:
        return args.func(args)
    except InvalidRegimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IngestionError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CarlabError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":
    sys.exit(main())
