"""Command-line front end for reproducible pretraining, evaluation, and analysis.

Subcommands: pretrain, probe, finetune, analyze-bits, analyze-variance,
analyze-units, supervised-bernoulli, report. Exit codes: 0 success,
1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    BITS_HEADER,
    PROBE_HEADER,
    UNITS_HEADER,
    VARIANCE_HEADER,
    active_bit_count,
    aggregate_variance,
    f1_vs_units,
    finetune,
    linear_probe,
    write_csv,
)
from .checkpoint import load_checkpoint
from .config import RunConfig, config_hash, load_config
from .data import make_views, AugmentationFamily
from .distributions import TemperatureSchedule, temperature_at
from .exceptions import (
    ContractError,
    DataError,
    DimensionError,
    DomainError,
    NumericalFailure,
    ParameterError,
)
from .model import StochConModel, SupervisedBernoulli
from .optim import Adam
from .train import build_datasets, pretrain
from .analysis import CSV_SCHEMA_VERSION

SUMMARY_HEADER = ["analysis", "mode", "config_hash", "seed", "step", "metric", "value"]

USAGE_EXIT = 1
DATA_EXIT = 2
NUMERIC_EXIT = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochcon", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, config=False):
        p.add_argument("--out", required=True, help="output directory for artifacts")
        p.add_argument("--seed", type=int, default=None, help="override the seed")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint file")
        if config:
            p.add_argument("--config", required=True, help="run config JSON")

    p = sub.add_parser("pretrain", help="run contrastive pretraining")
    common(p, config=True)
    p.add_argument("--epochs", type=int, default=None, help="override train.epochs")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a dotted config key, e.g. model.latent_dim=16")
    p.add_argument("--resume", default=None, help="resume from a checkpoint")
    p.add_argument("--stop-after-epoch", type=int, default=None,
                   help="stop early after this epoch (for interruption tests)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("probe", help="frozen linear probe on encoded features")
    common(p, checkpoint=True)
    p.add_argument("--features", default="latent_probs",
                   choices=["backbone_features", "latent_probs", "latent_hard"])
    p.add_argument("--epochs", type=int, default=150)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("finetune", help="supervised finetuning of the full network")
    common(p, checkpoint=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--frozen", action="store_true", help="update only the attached head")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("analyze-bits", help="active-bit statistics (Bernoulli models)")
    common(p, checkpoint=True)
    p.add_argument("--count-mode", default="ones", choices=["ones", "min_side"])
    p.set_defaults(func=cmd_analyze_bits)

    p = sub.add_parser("analyze-variance", help="aggregate variance (Gaussian models)")
    common(p, checkpoint=True)
    p.set_defaults(func=cmd_analyze_variance)

    p = sub.add_parser("analyze-units", help="random-forest F1 versus feature units")
    common(p, checkpoint=True)
    p.add_argument("--features", default="latent_hard",
                   choices=["backbone_features", "latent_probs", "latent_hard"])
    p.add_argument("--k", default=None, help="comma-separated unit counts (default: powers of two)")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--trees", type=int, default=50)
    p.set_defaults(func=cmd_analyze_units)

    p = sub.add_parser("supervised-bernoulli", help="supervised baseline with a latent layer")
    common(p, config=True)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--drop-prob", type=float, default=0.5)
    p.set_defaults(func=cmd_supervised)

    p = sub.add_parser("report", help="join run CSVs into one summary table")
    p.add_argument("--dir", required=True, help="run directory holding CSV artifacts")
    p.add_argument("--force", action="store_true", help="join rows despite hash conflicts")
    p.set_defaults(func=cmd_report)
    return parser


# ----------------------------------------------------------------------
# helpers

def _apply_overrides(raw: dict, args) -> list:
    overrides = []
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
        overrides.append(f"seed={args.seed}")
    if getattr(args, "epochs", None) is not None and args.command == "pretrain":
        raw.setdefault("train", {})["epochs"] = args.epochs
        overrides.append(f"train.epochs={args.epochs}")
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise ParameterError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass  # keep the raw string
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
        overrides.append(item)
    return overrides


def _load_run(path):
    try:
        ck = load_checkpoint(path)
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint not found: {path}") from exc
    config = RunConfig.from_dict(ck.config)
    model = StochConModel(config.model, seed=config.seed)
    model.load_parameters(ck.params)
    return model, config, ck


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _effective_seed(args, config: RunConfig) -> int:
    return config.seed if args.seed is None else args.seed


# ----------------------------------------------------------------------
# subcommands

def cmd_pretrain(args) -> int:
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"config file not found: {args.config}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"config file is not valid JSON: {exc}") from exc
    overrides = _apply_overrides(raw, args)
    config = RunConfig.from_dict(raw)
    result = pretrain(config, out_dir=args.out, resume_from=args.resume,
                      stop_after_epoch=args.stop_after_epoch)
    for record in result.manifest:
        if record.get("type") == "epoch" and record.get("loss") is not None:
            print(f"epoch {record['epoch']:4d}  loss {record['loss']:.4f}  "
                  f"lr {record['lr']:.4g}  temp {record['temperature']:.3f}")
    if overrides:
        with open(Path(args.out) / "overrides.json", "w") as fh:
            json.dump({"overrides": overrides, "config_hash": result.config_hash}, fh, indent=2)
    print(f"config_hash {result.config_hash}")
    if result.checkpoint_path is not None:
        print(f"checkpoint {result.checkpoint_path}")
    return 0


def cmd_probe(args) -> int:
    model, config, ck = _load_run(args.checkpoint)
    seed = _effective_seed(args, config)
    train_ds, test_ds = build_datasets(config)
    feats_train = model.encode(train_ds.flat_float(), mode=args.features)
    feats_test = model.encode(test_ds.flat_float(), mode=args.features)
    result = linear_probe(
        feats_train, train_ds.labels, epochs=args.epochs, seed=seed,
        test_features=feats_test, test_labels=test_ds.labels,
        config_hash=config_hash(config),
    )
    out = _out_dir(args)
    write_csv(out / "probe.csv", PROBE_HEADER, result.rows(step=ck.step))
    print(f"frozen top1 {result.top1:.4f}")
    return 0


def cmd_finetune(args) -> int:
    model, config, ck = _load_run(args.checkpoint)
    seed = _effective_seed(args, config)
    train_ds, test_ds = build_datasets(config)
    result = finetune(model, train_ds, test_ds, epochs=args.epochs, seed=seed,
                      freeze_backbone=args.frozen, config_hash=config_hash(config))
    out = _out_dir(args)
    write_csv(out / "finetune.csv", PROBE_HEADER, result.rows(step=ck.step))
    print(f"{result.mode} top1 {result.top1:.4f}")
    return 0


def cmd_analyze_bits(args) -> int:
    model, config, ck = _load_run(args.checkpoint)
    if config.model.distribution != "bernoulli":
        raise ContractError("bernoulli checkpoint required")
    seed = _effective_seed(args, config)
    train_ds, test_ds = build_datasets(config)
    rows = []
    for ds in (train_ds, test_ds):
        stats = active_bit_count(model, ds, step=ck.step, count_mode=args.count_mode)
        rows.extend(stats.rows(config_hash=config_hash(config), seed=seed))
    out = _out_dir(args)
    write_csv(out / "bits.csv", BITS_HEADER, rows)
    print(f"mean active bits (train/test): {rows[0]['mean_active_bits']:.2f} / "
          f"{rows[1]['mean_active_bits']:.2f} of {config.model.latent_dim}")
    return 0


def cmd_analyze_variance(args) -> int:
    model, config, ck = _load_run(args.checkpoint)
    if config.model.distribution != "gaussian":
        raise ContractError("gaussian checkpoint required")
    seed = _effective_seed(args, config)
    train_ds, test_ds = build_datasets(config)
    rows = []
    for ds in (train_ds, test_ds):
        stats = aggregate_variance(model, ds, step=ck.step)
        rows.extend(stats.rows(config_hash=config_hash(config), seed=seed))
    out = _out_dir(args)
    write_csv(out / "variance.csv", VARIANCE_HEADER, rows)
    print(f"aggregate variance (train/test): {rows[0]['aggregate_variance']:.4g} / "
          f"{rows[1]['aggregate_variance']:.4g}")
    return 0


def cmd_analyze_units(args) -> int:
    model, config, ck = _load_run(args.checkpoint)
    if args.features != "backbone_features" and config.model.distribution == "none":
        raise ContractError("latent features need a latent checkpoint")
    seed = _effective_seed(args, config)
    train_ds, _ = build_datasets(config)
    feats = model.encode(train_ds.flat_float(), mode=args.features)
    d = feats.shape[1]
    if args.k is not None:
        k_values = sorted({int(k) for k in args.k.split(",")})
    else:
        k_values = sorted({1, 2, 4, 8, 16, 32, 64, d} & set(range(1, d + 1))) or [d]
    sweep = f1_vs_units(feats, train_ds.labels, k_values, n_folds=args.folds,
                        seed=seed, n_trees=args.trees)
    out = _out_dir(args)
    write_csv(out / "units.csv", UNITS_HEADER,
              sweep.rows(config_hash=config_hash(config), seed=seed, step=ck.step))
    best = max(sweep.mean_f1)
    print("units " + ", ".join(f"k={k}: {f:.3f}" for k, f in zip(sweep.k_values, sweep.mean_f1)))
    print(f"best mean macro F1 {best:.3f}")
    return 0


def cmd_supervised(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = RunConfig.from_dict({**config.to_dict(), "seed": args.seed})
    seed = config.seed
    train_ds, test_ds = build_datasets(config)
    sup = SupervisedBernoulli(config.model, num_classes=train_ds.num_classes, seed=seed)
    opt = Adam(sup.named_parameters(), lr=1e-3)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 61))))
    family = AugmentationFamily(noise_sigma=0.0, brightness=0.0)
    n = len(train_ds)
    batch = config.train.batch_size
    steps_per_epoch = max(1, n // batch)
    total = max(1, args.epochs * steps_per_epoch)
    sched = TemperatureSchedule(start=config.model.temp_start, end=config.model.temp_end,
                                total_steps=total)
    step = 0
    for epoch in range(args.epochs):
        order = rng.permutation(n)
        for b in range(steps_per_epoch):
            idx = order[b * batch:(b + 1) * batch]
            if idx.size < 2:
                continue
            views = make_views(train_ds.images[idx], idx, family, 1, 0, seed=seed, epoch=epoch)
            opt.zero_grad()
            loss = sup.loss(views.views, train_ds.labels[idx], drop_prob=args.drop_prob,
                            temperature=temperature_at(min(step, total), sched), rng=rng)
            if not np.isfinite(loss.data).all():
                raise NumericalFailure("non-finite supervised loss", step=step)
            loss.backward()
            opt.step()
            step += 1
    top1 = float((sup.predict(test_ds.flat_float()) == test_ds.labels).mean())
    out = _out_dir(args)
    rows = [{
        "schema_version": CSV_SCHEMA_VERSION, "analysis": "supervised",
        "config_hash": config_hash(config), "seed": seed, "step": step,
        "mode": f"drop={args.drop_prob}", "top1": top1, "epochs": args.epochs,
    }]
    write_csv(out / "supervised.csv", PROBE_HEADER, rows)
    print(f"supervised top1 {top1:.4f}")
    return 0


_METRIC_COLUMNS = {
    "probe": [("top1", "top1")],
    "supervised": [("top1", "top1")],
    "bits": [("mean_active_bits", "mean_active_bits"), ("std_active_bits", "std_active_bits")],
    "variance": [("aggregate_variance", "aggregate_variance")],
    "units": [("mean_f1", "mean_f1")],
}


def cmd_report(args) -> int:
    run_dir = Path(args.dir)
    if not run_dir.is_dir():
        raise DataError(f"not a directory: {run_dir}")
    rows = []
    for path in sorted(run_dir.glob("*.csv")):
        if path.name == "summary.csv":
            continue
        with open(path, newline="") as fh:
            rows.extend(csv.DictReader(fh))
    hashes = {row["config_hash"] for row in rows if row.get("config_hash")}
    if len(hashes) > 1 and not args.force:
        raise DataError(
            f"refusing to join rows with conflicting config hashes {sorted(hashes)}; use --force"
        )
    summary = []
    for row in rows:
        analysis = row.get("analysis", "")
        for metric, column in _METRIC_COLUMNS.get(analysis, []):
            if column in row:
                summary.append({
                    "analysis": analysis,
                    "mode": row.get("mode", row.get("split", row.get("k", ""))),
                    "config_hash": row.get("config_hash", ""),
                    "seed": row.get("seed", ""),
                    "step": row.get("step", ""),
                    "metric": metric,
                    "value": row[column],
                })
    write_csv(run_dir / "summary.csv", SUMMARY_HEADER, summary)
    print(f"{len(summary)} summary rows -> {run_dir / 'summary.csv'}")
    return 0


# ----------------------------------------------------------------------

def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else USAGE_EXIT
    try:
        return args.func(args)
    except (ParameterError,) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (DataError, ContractError, DimensionError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERIC_EXIT


if __name__ == "__main__":
    sys.exit(main())
