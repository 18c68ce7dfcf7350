"""``feederlab`` command line."""

from __future__ import annotations

import argparse
import datetime as dt
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import config_digest, load_config
from .datagen import ConfigError, generate_dataset
from .domain import TimeGrid
from .experiment import (
    CrossvalConfig,
    dataset_fingerprint,
    export_profiles,
    load_run,
    run_experiment,
    write_reports,
)
from .io import read_dataset, series_from_frame, write_dataset
from .metrics import MetricConfig, aggregate_report, evaluate_feeder
from .models import MODEL_KINDS, save_model, train
from .prep import SampleTable, build_samples, clean_dataset, write_cleaning_report


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=str) + "\n")


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    gen = cfg.generator
    if args.seed is not None:
        gen = replace(gen, seed=args.seed)
    dataset = generate_dataset(gen)
    out = Path(args.out)
    write_dataset(out, dataset)
    plain = cfg.to_dict()["generator"]
    plain["seed"] = gen.seed
    _write_json(out / "manifest.json", {"generator": plain, "seed": gen.seed, "config_digest": config_digest(plain),
                                        "dataset_fingerprint": dataset_fingerprint(dataset)})
    print(f"wrote {len(dataset.feeders)} feeders x {dataset.grid.n_steps} steps to {out}")
    return 0


def cmd_clean(args) -> int:
    cfg = load_config(args.config)
    dataset = read_dataset(args.inp)
    cleaned, report = clean_dataset(dataset, cfg.cleaning)
    write_dataset(args.out, cleaned)
    write_cleaning_report(args.report, report)
    removed = {k: v for k, v in report.removed_counts().items() if v}
    print(f"kept {len(cleaned.feeders)} of {len(dataset.feeders)} feeders; removed by rule: {removed or 'none'}")
    return 0


def cmd_featurize(args) -> int:
    table = build_samples(read_dataset(args.inp))
    table.to_csv(args.out)
    print(f"wrote {len(table)} samples from {len(table.feeders())} feeders to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    config = cfg.models[args.model]
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    table = SampleTable.from_csv(args.samples)
    model = train(table, config)
    save_model(model, args.out)
    print(f"trained {args.model} on {len(table)} samples; saved to {args.out}")
    return 0


def _day_grid(stamps: pd.Series) -> TimeGrid:
    first = stamps.min().to_pydatetime()
    last = stamps.max().to_pydatetime()
    start = dt.datetime.combine(first.date(), dt.time())
    end = dt.datetime.combine(last.date(), dt.time(23, 45))
    return TimeGrid.from_range(start, end)


def cmd_evaluate(args) -> int:
    truth = pd.read_csv(args.truth, dtype={"feeder_id": str}, float_precision="round_trip")
    est = pd.read_csv(args.estimates, dtype={"feeder_id": str}, float_precision="round_trip")
    stamps = pd.to_datetime(pd.concat([truth["timestamp"], est["timestamp"]]), format="ISO8601")
    grid = _day_grid(stamps)
    y = {s.feeder_id: s.values for s in series_from_frame(truth, grid).values()}
    value_col = "estimate_kw" if "estimate_kw" in est.columns else "active_power_kw"
    yhat = {s.feeder_id: s.values for s in series_from_frame(est, grid, value_col).values()}
    config = MetricConfig(args.peak_threshold_kw, args.min_peak_days, args.shape_window_h)
    per_feeder = []
    for fid in sorted(set(y) & set(yhat)):
        present = ~np.isnan(y[fid]) & ~np.isnan(yhat[fid])
        per_feeder.append(evaluate_feeder(fid, y[fid], yhat[fid], grid, config, present))
    report = aggregate_report(per_feeder)
    report.to_csv(args.out)
    print(f"evaluated {len(per_feeder)} feeders; report in {args.out}")
    return 0


def cmd_crossval(args) -> int:
    cfg = load_config(args.config)
    cv = cfg.crossval
    cv = CrossvalConfig(
        k=args.k if args.k is not None else cv.k,
        seed=args.seed if args.seed is not None else cv.seed,
        models=tuple(args.models.split(",")) if args.models else cv.models,
        workers=args.workers if args.workers is not None else cv.workers,
    )
    dataset = read_dataset(args.data)
    out = Path(args.out) if args.out else Path("runs") / config_digest(
        {"crossval": cv.__dict__, "data": dataset_fingerprint(dataset),
         "models": {k: v.to_dict() for k, v in cfg.models.items()}})
    result = run_experiment(dataset, cfg.models, metric_config=cfg.metrics, run_dir=out, crossval=cv,
                            data_dir=args.data)
    table = result.combined_table()
    means = table[table["statistic"] == "mean"].pivot(index="metric", columns="model", values="value")
    print(means.to_string())
    print(f"run directory: {out}")
    return 0


def cmd_report(args) -> int:
    if args.format != "csv":
        raise ConfigError(f"unsupported report format {args.format!r}")
    result = load_run(args.run)
    paths = write_reports(result, args.out or args.run)
    for p in paths:
        print(p)
    return 0


def cmd_export_profile(args) -> int:
    result = load_run(args.run, data_dir=args.data)
    out = args.out or Path(args.run) / f"profile_{args.feeder}_{args.model}_W{args.week}.csv"
    df = export_profiles(result, args.feeder, args.week, model=args.model, path=out)
    print(f"wrote {len(df)} rows to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="feederlab", description="Feeder-metadata pseudo-measurement toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("clean", help="apply the cleaning rules")
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--report", required=True)
    c.add_argument("--config")
    c.set_defaults(func=cmd_clean)

    f = sub.add_parser("featurize", help="write the sample table")
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_featurize)

    t = sub.add_parser("train", help="fit one model on a sample table")
    t.add_argument("--samples", required=True)
    t.add_argument("--model", choices=MODEL_KINDS, required=True)
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score estimates against measurements")
    e.add_argument("--truth", required=True)
    e.add_argument("--estimates", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--peak-threshold-kw", type=float, default=MetricConfig.peak_threshold_kw)
    e.add_argument("--min-peak-days", type=int, default=MetricConfig.min_peak_days)
    e.add_argument("--shape-window-h", type=float, default=MetricConfig.shape_window_h)
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("crossval", help="run the feeder-wise cross-validation")
    x.add_argument("--data", required=True)
    x.add_argument("--models")
    x.add_argument("--k", type=int)
    x.add_argument("--seed", type=int)
    x.add_argument("--workers", type=int)
    x.add_argument("--config")
    x.add_argument("--out")
    x.set_defaults(func=cmd_crossval)

    r = sub.add_parser("report", help="re-emit the report tables of a run")
    r.add_argument("--run", required=True)
    r.add_argument("--format", default="csv")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)

    ep = sub.add_parser("export-profile", help="one test feeder's week as CSV")
    ep.add_argument("--run", required=True)
    ep.add_argument("--feeder", required=True)
    ep.add_argument("--week", required=True)
    ep.add_argument("--model", choices=MODEL_KINDS, default="boosted_trees")
    ep.add_argument("--data")
    ep.add_argument("--out")
    ep.set_defaults(func=cmd_export_profile)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, LookupError, ValueError, FileNotFoundError) as exc:
        print(f"feederlab {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
