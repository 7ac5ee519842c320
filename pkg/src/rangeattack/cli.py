"""Command-line entry point: ``rangeattack {synth,train,attack,report}``.

Every command writes a run manifest (``*.run.json``) next to its outputs that
records the resolved configuration, seed, artifact paths and wall-clock
duration. Everything except the duration is a pure function of the flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .attack import PRESETS, AttackConfig, TargetRange, attack
from .data import grand_mean, parse_shape, read_dataset, synth_dataset, write_dataset
from .metrics import (
    boundary_projection,
    read_report,
    record_from_result,
    summarize,
    trend_statistic,
    write_plot_tables,
    write_report,
)
from .victim import TrainConfig, default_victim, load_model, save_model, train


class CLIError(Exception):
    """A user-facing failure; printed without a traceback."""


def _write_json(path: Path, payload: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def write_run_manifest(path, command: str, config: dict, seed: int, artifacts: dict, duration: float) -> Path:
    path = Path(path)
    _write_json(
        path,
        {
            "command": command,
            "config": config,
            "seed": seed,
            "artifacts": {k: str(v) for k, v in artifacts.items()},
            "duration_seconds": duration,
        },
    )
    return path


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _ensure_dir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CLIError(f"cannot create {path}: {e.strerror}") from None


# ------------------------------------------------------------------ synth


def cmd_synth(args) -> int:
    t0 = time.perf_counter()
    out_dir = Path(args.out_dir)
    _ensure_dir(out_dir)
    ds = synth_dataset(args.n, args.shape, args.seed)
    try:
        manifest = write_dataset(ds, out_dir)
    except OSError as e:
        raise CLIError(f"cannot write to {out_dir}: {e.strerror}") from None
    config = {"n": args.n, "shape": list(args.shape), "seed": args.seed, "out_dir": str(out_dir)}
    write_run_manifest(
        out_dir / "synth.run.json", "synth", config, args.seed, {"manifest": manifest}, time.perf_counter() - t0
    )
    print(f"wrote {len(ds)} images and {manifest}")
    return 0


# ------------------------------------------------------------------ train


def _load_data(path):
    try:
        return read_dataset(path)
    except FileNotFoundError:
        raise CLIError(f"dataset not found: {path}") from None


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    ds = _load_data(args.data)
    out = Path(args.out)
    _ensure_dir(out.parent)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs, seed=args.seed)
    net = default_victim(ds.shape, grand_mean=grand_mean(ds), seed=args.seed)

    def log(epoch, loss):
        if not args.quiet:
            print(f"epoch {epoch + 1}/{cfg.epochs} loss {loss:.4f}", flush=True)

    net, history = train(net, ds, cfg, log=log)
    save_model(net, out)
    hist_path = _sibling(out, "_history.csv")
    tmp = hist_path.with_name(hist_path.name + ".tmp")
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("epoch", "loss"))
        writer.writerows((i + 1, repr(loss)) for i, loss in enumerate(history))
    os.replace(tmp, hist_path)

    config = {
        "data": str(args.data),
        "epochs": cfg.epochs,
        "lr": cfg.learning_rate,
        "batch": cfg.batch_size,
        "beta1": cfg.beta1,
        "beta2": cfg.beta2,
        "epsilon_hat": cfg.epsilon_hat,
        "seed": cfg.seed,
        "grand_mean": net.preprocess.grand_mean,
        "input_shape": list(ds.shape),
    }
    write_run_manifest(
        _sibling(out, ".run.json"),
        "train",
        config,
        args.seed,
        {"model": out, "history": hist_path},
        time.perf_counter() - t0,
    )
    return 0


# ----------------------------------------------------------------- attack


def _resolve_target(args) -> TargetRange:
    return PRESETS[args.preset] if args.preset is not None else args.range


def cmd_attack(args) -> int:
    t0 = time.perf_counter()
    target = _resolve_target(args)
    try:
        cfg = AttackConfig(
            max_iterations=args.K,
            step_size=args.eta,
            schedule=args.schedule,
            rounded_check_period=args.check_period,
            seed=args.seed,
        )
    except ValueError as e:
        raise CLIError(str(e)) from None
    if args.workers < 1:
        raise CLIError("--workers must be >= 1")
    try:
        net = load_model(args.model)
    except FileNotFoundError:
        raise CLIError(f"model not found: {args.model}") from None
    except ValueError as e:
        raise CLIError(str(e)) from None
    ds = _load_data(args.data)
    if ds.shape != net.input_shape:
        raise CLIError(f"data shape {ds.shape} does not match model input shape {net.input_shape}")
    out = Path(args.out)
    _ensure_dir(out.parent)

    def run_one(i):
        try:
            return record_from_result(ds.ids[i], attack(net, ds.images[i], target, cfg), target), None
        except Exception as e:  # noqa: BLE001 - reported per image, campaign continues
            return None, f"{ds.ids[i]}: {type(e).__name__}: {e}"

    if args.workers == 1:
        outcomes = [run_one(i) for i in range(len(ds))]
    else:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            outcomes = list(pool.map(run_one, range(len(ds))))
    records = [r for r, _ in outcomes if r is not None]
    errors = [e for _, e in outcomes if e is not None]
    for e in errors:
        print(f"error: {e}", file=sys.stderr)

    write_report(records, out)
    summary = {
        "target": {"lower": target.lower, "upper": target.upper},
        "images": len(ds),
        "errors": errors,
    }
    if records:
        summary.update(summarize(records))
        summary["boundary_projection"] = boundary_projection(records, target)
        try:
            summary["trend_statistic"] = trend_statistic(records)
        except ValueError as e:
            summary["trend_statistic"] = None
            summary["trend_statistic_note"] = str(e)
    summary_path = _sibling(out, "_summary.json")
    _write_json(summary_path, summary)
    print(json.dumps(summary, indent=2, sort_keys=True))

    config = {
        "model": str(args.model),
        "data": str(args.data),
        "lower": target.lower,
        "upper": target.upper,
        "preset": args.preset,
        "K": cfg.max_iterations,
        "eta": cfg.step_size,
        "schedule": cfg.schedule,
        "check_period": cfg.rounded_check_period,
        "workers": args.workers,
    }
    write_run_manifest(
        _sibling(out, ".run.json"),
        "attack",
        config,
        args.seed,
        {"report": out, "summary": summary_path},
        time.perf_counter() - t0,
    )
    return 1 if errors else 0


# ----------------------------------------------------------------- report


def cmd_report(args) -> int:
    t0 = time.perf_counter()
    if args.dither_variance < 0:
        raise CLIError("--dither-variance must be >= 0")
    try:
        records = read_report(args.inp)
    except FileNotFoundError:
        raise CLIError(f"report not found: {args.inp}") from None
    except ValueError as e:
        raise CLIError(str(e)) from None
    out = Path(args.out)
    _ensure_dir(out.parent)
    scatter, norms = write_plot_tables(records, out, args.dither_variance, args.seed)
    config = {"in": str(args.inp), "dither_variance": args.dither_variance, "seed": args.seed, "out": str(out)}
    write_run_manifest(
        _sibling(out, ".run.json"),
        "report",
        config,
        args.seed,
        {"scatter": scatter, "norms": norms},
        time.perf_counter() - t0,
    )
    print(f"wrote {scatter} and {norms} ({len(records)} rows each)")
    return 0


# ------------------------------------------------------------------ parser


def _shape(text):
    try:
        return parse_shape(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _range(text):
    try:
        return TargetRange.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rangeattack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic image dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--shape", type=_shape, default=(3, 32, 32), help="CxHxW (default 3x32x32)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the default victim network")
    p.add_argument("--data", required=True, help="dataset manifest CSV or its directory")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--lr", type=float, default=0.0001)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run a range attack on every image of a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--range", type=_range, help="L:U with L < U")
    target.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--K", type=int, default=500, help="iteration budget per image")
    p.add_argument("--eta", type=float, default=1.0, help="step size")
    p.add_argument("--schedule", choices=("constant", "decay"), default="constant")
    p.add_argument("--check-period", type=int, default=1, help="iterations between rounded success checks")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report CSV")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("report", help="turn a report CSV into plot-ready tables")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--dither-variance", type=float, default=0.005)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="base path; writes <stem>_scatter.csv and <stem>_norms.csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CLIError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
