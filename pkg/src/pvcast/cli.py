"""Command-line entry point.

Each subcommand reads an optional JSON config file, applies ``--set``
overrides on top, and writes its outputs under a run directory named by the
config hash.  Exit codes: 0 on success, 1 for validation problems (bad
flags, bad config, bad input files), 2 for numeric failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .data import repair_dataset, synth_dataset, write_csv
from .errors import NumericError, ValidationError
from .pipeline import (
    ForecastRecords,
    PipelineConfig,
    apply_overrides,
    evaluate_records,
    load_dataset,
    predict_from_checkpoint,
    prepare,
    run_all,
    run_decompose,
    run_dir_for,
    run_train,
    write_run_inputs,
)

SEED_ENV = "PVCAST_SEED"


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    """Config file, then ``--set`` overrides, then the seed flag/env var."""
    base: dict = {}
    if args.config is not None:
        payload = json.loads(Path(args.config).read_text())
        base = payload.get("config", payload)
    overrides = list(args.set or [])
    if getattr(args, "data", None):
        overrides.append(f"data.csv_path={args.data}")
    merged = apply_overrides(base, overrides)
    seed = args.seed if args.seed is not None else os.environ.get(SEED_ENV)
    if seed is not None:
        try:
            merged["seed"] = int(seed)
        except ValueError:
            raise ValidationError(f"seed must be an integer, got {seed!r}") from None
    return PipelineConfig.from_dict(merged)


def _add_config_options(p: argparse.ArgumentParser, with_data: bool = True) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (dotted path, JSON value); repeatable")
    p.add_argument("--seed", type=int, help=f"RNG seed (overrides config and ${SEED_ENV})")
    if with_data:
        p.add_argument("--data", help="input CSV path (shorthand for --set data.csv_path=...)")


def cmd_synth(args: argparse.Namespace) -> dict:
    config = _load_config(args)
    ds = synth_dataset(config.data.synth, seed=config.seed)
    write_csv(ds, args.out, config.config_hash())
    return {"out": args.out, "rows": len(ds), "config_hash": config.config_hash()}


def cmd_repair(args: argparse.Namespace) -> dict:
    config = _load_config(args)
    raw = load_dataset(config)
    ds, report = repair_dataset(raw)
    run_dir = run_dir_for(config, args.out_root)
    write_csv(ds, str(run_dir / "repaired.csv"), config.config_hash())
    (run_dir / "repair_report.json").write_text(report.to_json())
    return {
        "run_dir": str(run_dir),
        "config_hash": config.config_hash(),
        "rows": len(ds),
        "repair": report.to_dict(),
    }


def cmd_decompose(args: argparse.Namespace) -> dict:
    return run_decompose(_load_config(args), args.out_root)


def cmd_train(args: argparse.Namespace) -> dict:
    config = _load_config(args)
    run_dir = run_dir_for(config, args.out_root)
    prepared = prepare(config)
    write_run_inputs(prepared, run_dir)
    _, report = run_train(prepared, run_dir)
    return {
        "run_dir": str(run_dir),
        "config_hash": config.config_hash(),
        "checkpoint": str(run_dir / "checkpoint.npz"),
        "stop_reason": report.stop_reason,
        "best_epoch": report.best_epoch,
        "best_val_loss": report.best_val_loss,
        "epochs": len(report.train_losses),
    }


def cmd_predict(args: argparse.Namespace) -> dict:
    config = _load_config(args)
    if config.data.csv_path is None and args.config is None:
        raise ValidationError("predict needs input data: pass --data or a config")
    dataset = load_dataset(config)
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent / "predict"
    records = predict_from_checkpoint(args.checkpoint, dataset, out_dir)
    return {
        "out_dir": str(out_dir),
        "forecasts": str(out_dir / "forecasts.csv"),
        "rows": len(records),
    }


def cmd_evaluate(args: argparse.Namespace) -> dict:
    records = ForecastRecords.read_csv(args.forecasts)
    report = evaluate_records(records, args.alpha, args.classical_winkler)
    first = Path(args.forecasts).read_text().splitlines()[0]
    chash = first.removeprefix("# config_hash=") if first.startswith("# config_hash=") else None
    out_dir = Path(args.out) if args.out else Path(args.forecasts).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write(out_dir, chash)
    return {"out_dir": str(out_dir), **report.to_dict()}


def cmd_run_all(args: argparse.Namespace) -> dict:
    return run_all(_load_config(args), args.out_root)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pvcast",
                                 description="short-term PV power forecasting pipeline")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("synth", help="generate a synthetic plant dataset CSV")
    _add_config_options(p, with_data=False)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("repair", help="repair gaps/outliers and write the cleaned CSV")
    _add_config_options(p)
    p.add_argument("--out-root", default="runs", help="root directory for run outputs")
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("decompose", help="decompose the series and write components")
    _add_config_options(p)
    p.add_argument("--out-root", default="runs")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("train", help="train a model and write its checkpoint")
    _add_config_options(p)
    p.add_argument("--out-root", default="runs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="forecast a dataset with a stored checkpoint")
    _add_config_options(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint .npz from train")
    p.add_argument("--out", help="output directory (default: <checkpoint dir>/predict)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a forecast CSV")
    p.add_argument("--forecasts", required=True, help="forecasts.csv from predict/run-all")
    p.add_argument("--alpha", type=float, default=0.9, help="central interval level")
    p.add_argument("--classical-winkler", action="store_true",
                   help="divide the miss penalty by 1 - alpha")
    p.add_argument("--out", help="output directory (default: next to the forecasts)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run-all", help="full pipeline: repair, decompose, train, forecast, score")
    _add_config_options(p)
    p.add_argument("--out-root", default="runs")
    p.set_defaults(func=cmd_run_all)

    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; bad flags are validation errors here
        return 0 if exc.code in (0, None) else 1
    try:
        summary = args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
