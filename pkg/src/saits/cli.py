"""Command-line entry point: ``saits <command> [options]``.

Commands: generate, train, impute, evaluate, ablate, gradcheck.

Settings resolve in this order, later sources winning:
built-in defaults < ``--preset`` < ``--config`` file < ``SAITS_*`` environment
variables < command-line flags.  The effective settings are written to
``config.json`` in the output directory of every command.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import gradcheck as gc
from .data import (ImputationDataset, Split, apply_mcar, build_dataset, ingest_csv, load_dataset,
                   save_dataset, synth_generate, window)
from .errors import (CheckpointError, ConfigError, DataError, DimensionError, TrainingDiverged)
from .evaluate import baseline_last, baseline_median, evaluate_method, write_reports
from .model import PRESETS, VARIANTS, canonical_variant
from .training import impute, load_checkpoint, save_checkpoint, train

log = logging.getLogger("saits")

# key -> (type, default). ``None`` defaults for architecture keys mean "take
# the preset's value".
SETTINGS = {
    "preset": (str, None),  # None: saits-base, or the small gradcheck instance
    "seed": (int, 0),
    "variant": (str, "saits"),
    "dataset": (str, None),
    "out": (str, "saits-out"),
    "epochs": (int, 10_000),
    "patience": (int, 30),
    "batch": (int, 128),
    "lr": (float, 1e-3),
    "mit_rate": (float, 0.2),
    "lambda": (float, 1.0),
    "holes": (float, 0.10),
    "n_layers": (int, None),
    "d_model": (int, None),
    "d_ffn": (int, None),
    "n_heads": (int, None),
    "d_k": (int, None),
    "d_v": (int, None),
    "dropout": (float, None),
}
ARCH_KEYS = ("n_layers", "d_model", "d_ffn", "n_heads", "d_k", "d_v", "dropout")
ENV_PREFIX = "SAITS_"
EXIT_ERROR = 1

RECOVERABLE = (ConfigError, DataError, DimensionError, CheckpointError, TrainingDiverged,
               FileNotFoundError, IsADirectoryError)


def _coerce(key, value, source):
    kind = SETTINGS[key][0]
    if value is None:
        return None
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{source}: {key} expects {kind.__name__}, got {value!r}") from None


def _normalise(key):
    return key.strip().lower().replace("-", "_")


def read_config_file(path):
    """Flat key/value mapping (YAML or JSON) with keys named like the flags."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a flat key/value mapping")
    out = {}
    for raw_key, value in data.items():
        key = _normalise(str(raw_key))
        if key not in SETTINGS:
            raise ConfigError(f"{path}: unknown setting {raw_key!r}")
        if isinstance(value, (dict, list)):
            raise ConfigError(f"{path}: setting {raw_key!r} must be a scalar")
        out[key] = _coerce(key, value, path)
    return out


def read_env(environ=None):
    environ = os.environ if environ is None else environ
    out = {}
    for key in SETTINGS:
        name = ENV_PREFIX + key.upper()
        if name in environ:
            out[key] = _coerce(key, environ[name], name)
    return out


def resolve_settings(args, environ=None):
    """Merge defaults, config file, environment and flags (in that order)."""
    settings = {k: default for k, (_, default) in SETTINGS.items()}
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    settings.update(read_env(environ))
    for key in SETTINGS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = _coerce(key, value, f"--{key.replace('_', '-')}")
    if settings["preset"] is not None and settings["preset"] not in PRESETS:
        raise ConfigError(f"unknown preset {settings['preset']!r}; choose from {sorted(PRESETS)}")
    return settings


def model_config(settings, T, D, variant=None):
    """SaitsConfig from the preset with explicit architecture overrides applied."""
    overrides = {k: settings[k] for k in ARCH_KEYS if settings[k] is not None}
    return PRESETS[settings["preset"] or "saits-base"](
        T, D, variant=canonical_variant(variant or settings["variant"]),
        mit_rate=settings["mit_rate"], lambda_mit=settings["lambda"], **overrides)


def _out_dir(settings):
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(out, settings, command, **extra):
    payload = {"command": command, "settings": settings, **extra}
    with open(out / "config.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def _require_dataset(settings):
    if not settings["dataset"]:
        raise ConfigError("no dataset given (use --dataset, the config file or SAITS_DATASET)")
    return load_dataset(settings["dataset"])


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- commands -----------------------------------------------------------------------

def cmd_generate(args, settings):
    out = _out_dir(settings)
    if args.csv:
        if args.T is None:
            raise ConfigError("--T (window length) is required with --csv")
        raw = ingest_csv(args.csv, na_tokens=tuple(args.na.split(",")) if args.na is not None
                         else ("", "NA", "NaN", "nan"), id_column=args.id_column)
        samples = window(raw, args.T, args.stride or args.T)
        if args.missing:
            samples = apply_mcar(samples, args.missing, np.random.default_rng(settings["seed"]))
        meta = {"source": "csv", "path": str(args.csv), "T": args.T, "stride": args.stride or args.T,
                "missing_rate": args.missing or 0.0, "seed": settings["seed"], "holes": settings["holes"]}
        ds = build_dataset(samples, raw.feature_names, holes=settings["holes"], seed=settings["seed"],
                           meta=meta)
    else:
        ds = synth_generate(args.kind, args.n, args.T or 24, args.D or 8,
                            missing_rate=0.1 if args.missing is None else args.missing,
                            seed=settings["seed"], holes=settings["holes"])
    path = out / "dataset.bin"
    save_dataset(ds, path)
    manifest = {
        "file": path.name,
        "sha256": _sha256(path),
        "info": ds.meta,
        "feature_names": ds.feature_names,
        "splits": {name: {"n": len(s), "observed": int(s.M.sum()),
                          "holdout": int(s.M_holdout.sum()) if s.has_holdout else 0}
                   for name, s in ds.splits().items()},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    _echo(out, settings, "generate", generator=ds.meta)
    print(f"wrote {path} ({ds.T} steps x {ds.D} features; "
          + ", ".join(f"{k}={v['n']}" for k, v in manifest["splits"].items()) + ")")
    return 0


def _evaluate_all(dataset, model_fills, settings):
    """Reports for every (method, split); baselines are always included."""
    fills = dict(model_fills)
    fills["median"] = baseline_median(dataset)
    fills["last"] = baseline_last(dataset)
    reports = []
    for method, fill in fills.items():
        for split in ("val", "test"):
            if dataset.split(split).has_holdout:
                reports.append(evaluate_method(fill, dataset, method, split, config=settings,
                                               seed=settings["seed"]))
    if not reports:
        raise DataError("dataset has no holdout masks to evaluate against")
    return reports


def _model_fills(model, dataset):
    return {name: impute(model, s.X, s.M) for name, s in dataset.splits().items()}


def cmd_train(args, settings):
    dataset = _require_dataset(settings)
    out = _out_dir(settings)
    config = model_config(settings, dataset.T, dataset.D)
    _echo(out, settings, "train", model=config.to_dict())
    try:
        result = train(config, dataset, lr=settings["lr"], batch_size=settings["batch"],
                       patience=settings["patience"], max_epochs=settings["epochs"],
                       seed=settings["seed"])
    except TrainingDiverged as exc:
        if exc.state is not None:
            save_checkpoint(exc.state, out / "checkpoint.bin")
            print(f"last good checkpoint written to {out / 'checkpoint.bin'}", file=sys.stderr)
        raise
    save_checkpoint(result.state, out / "checkpoint.bin")
    result.curve.to_csv(out / "curves.csv")
    reports = _evaluate_all(dataset, {config.variant: _model_fills(result.model, dataset)}, settings)
    write_reports(reports, out / "report.csv", out / "report.json", settings)
    print(f"{config.variant}: {result.epochs_run} epochs, best epoch {result.best_epoch}, "
          f"val imputation MAE {result.state.best_mae:.4f}")
    _print_reports(reports)
    return 0


def cmd_impute(args, settings):
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    dataset = _require_dataset(settings)
    model, _ = load_checkpoint(args.checkpoint)
    cfg = model.config
    if (cfg.T, cfg.D) != (dataset.T, dataset.D):
        raise DataError(f"checkpoint expects (T={cfg.T}, D={cfg.D}) but dataset is "
                        f"(T={dataset.T}, D={dataset.D})")
    out = _out_dir(settings)
    splits = {}
    for name, s in dataset.splits().items():
        filled = impute(model, s.X, s.M)
        if args.verify:
            obs = s.M == 1
            if not np.array_equal(filled[obs], s.X[obs]) or not np.all(np.isfinite(filled)):
                print(f"verify FAILED on split {name!r}: observed values not preserved",
                      file=sys.stderr)
                return EXIT_ERROR
        splits[name] = Split(filled, np.ones_like(s.M), s.X_holdout, s.M_holdout)
    imputed = ImputationDataset(splits["train"], splits["val"], splits["test"],
                                dataset.feature_names, dataset.standardizer,
                                {**dataset.meta, "imputed_by": str(args.checkpoint)})
    path = out / "imputed.bin"
    save_dataset(imputed, path, kind="imputed")
    _echo(out, settings, "impute", checkpoint=str(args.checkpoint))
    print(f"wrote {path}" + (" (observed positions verified bit-exact)" if args.verify else ""))
    return 0


def cmd_evaluate(args, settings):
    dataset = _require_dataset(settings)
    out = _out_dir(settings)
    fills = {}
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
        fills[model.config.variant] = _model_fills(model, dataset)
    if args.imputed:
        imp = load_dataset(args.imputed)
        fills[args.method or "imputed"] = {name: s.X for name, s in imp.splits().items()}
    reports = _evaluate_all(dataset, fills, settings)
    write_reports(reports, out / "report.csv", out / "report.json", settings)
    _echo(out, settings, "evaluate", checkpoint=args.checkpoint, imputed=args.imputed)
    _print_reports(reports)
    return 0


def cmd_ablate(args, settings):
    variants = [canonical_variant(v.strip()) for v in args.variants.split(",") if v.strip()]
    if len(variants) < 2:
        raise ConfigError("ablation needs at least two variants")
    dataset = _require_dataset(settings)
    out = _out_dir(settings)
    _echo(out, settings, "ablate", variants=variants)
    rows = []
    for variant in variants:
        config = model_config(settings, dataset.T, dataset.D, variant)
        result = train(config, dataset, lr=settings["lr"], batch_size=settings["batch"],
                       patience=settings["patience"], max_epochs=settings["epochs"],
                       seed=settings["seed"])
        result.curve.to_csv(out / f"curves_{variant}.csv")
        fill = impute(result.model, dataset.test.X, dataset.test.M)
        rep = evaluate_method(fill, dataset, variant, "test", seed=settings["seed"])
        m = rep.standardized
        rows.append({"variant": variant, "mae": m.mae, "rmse": m.rmse, "mre": m.mre,
                     "epochs": result.epochs_run})
        log.info("%s: MAE %.4f", variant, m.mae)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["variant", "mae", "rmse", "mre", "epochs"])
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v)
                        for k, v in r.items()})
    print(f"{'variant':<22}{'MAE':>9}{'RMSE':>9}{'MRE':>9}")
    for r in rows:
        mre = "n/a" if r["mre"] is None else f"{r['mre']:.2%}"
        print(f"{r['variant']:<22}{r['mae']:>9.4f}{r['rmse']:>9.4f}{mre:>9}")
    return 0


def cmd_gradcheck(args, settings):
    if settings["preset"] is None:
        # no preset requested: the small instance that keeps the check fast
        config = gc.gradcheck_config(variant=canonical_variant(settings["variant"]))
        overrides = {k: settings[k] for k in ARCH_KEYS if settings[k] is not None}
        config = config.replace(**overrides) if overrides else config
    else:
        config = model_config(settings, args.T or 4, args.D or 3)
        if settings["dropout"] is None:
            config = config.replace(dropout=0.0)
    variants = VARIANTS if args.all_variants else (config.variant,)
    results = gc.run_suite(config, seed=settings["seed"], variants=variants)
    for r in results:
        print(r.line())
    worst = max(r.max_error for r in results)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed; max relative error {worst:.3e} "
          f"(tolerance {gc.TOLERANCE:g})")
    if args.out or settings["out"] != SETTINGS["out"][1]:
        out = _out_dir(settings)
        _echo(out, settings, "gradcheck", model=config.to_dict())
        with open(out / "gradcheck.txt", "w") as fh:
            fh.write("\n".join(r.line() for r in results) + "\n")
    if failed:
        print("FAILED: " + ", ".join(failed), file=sys.stderr)
        return EXIT_ERROR
    return 0


def _print_reports(reports):
    print(f"{'method':<22}{'split':<6}{'MAE':>9}{'RMSE':>9}{'MRE':>9}")
    for r in reports:
        m = r.standardized
        mre = "n/a" if m.mre is None else f"{m.mre:.2%}"
        print(f"{r.method:<22}{r.split:<6}{m.mae:>9.4f}{m.rmse:>9.4f}{mre:>9}")


# -- parser -------------------------------------------------------------------------

def _common(parser):
    g = parser.add_argument_group("run settings")
    g.add_argument("--config", help="flat key/value settings file (YAML or JSON)")
    g.add_argument("--preset", help=f"architecture preset: {', '.join(sorted(PRESETS))}")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory")
    g.add_argument("--variant", help="model variant (saits, saits_no_diag, transformer, ...)")
    g.add_argument("--dataset", help="dataset file written by `generate`")
    g.add_argument("--epochs", type=int, help="maximum number of epochs")
    g.add_argument("--patience", type=int, help="early-stopping patience in epochs")
    g.add_argument("--batch", type=int, help="batch size")
    g.add_argument("--lr", type=float, help="Adam learning rate")
    g.add_argument("--mit-rate", dest="mit_rate", type=float, help="artificial masking rate")
    g.add_argument("--lambda", dest="lambda", type=float, help="weight of the imputation loss")
    g.add_argument("--holes", type=float, help="fraction of val/test observations held out")
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="saits", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic or CSV-derived dataset file")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--kind", choices=["sine_mixture", "random_walk"])
    src.add_argument("--csv", help="CSV with a header row, one row per time step")
    p.add_argument("--n", type=int, default=512, help="number of synthetic samples")
    p.add_argument("--T", type=int, help="steps per sample (window length for --csv)")
    p.add_argument("--D", type=int, help="features (synthetic only)")
    p.add_argument("--missing", type=float, help="MCAR missing rate applied before splitting")
    p.add_argument("--stride", type=int, help="window stride for --csv (default: T)")
    p.add_argument("--id-column", dest="id_column", help="sample-id column for --csv")
    p.add_argument("--na", help="comma-separated NA tokens for --csv")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model; writes checkpoint, curves and report")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("impute", help="fill missing values with a trained checkpoint")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--verify", action="store_true",
                   help="fail unless observed values are copied bit-exactly")
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("evaluate", help="score a model and the Median/Last baselines")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--imputed", help="imputed file written by `impute`")
    p.add_argument("--method", help="row label for --imputed")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train several variants on identical data and seed")
    _common(p)
    p.add_argument("--variants", default="saits,saits_no_diag", help="comma-separated variants")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the loss")
    _common(p)
    p.add_argument("--dropout", type=float, help="dropout rate (must be 0)")
    p.add_argument("--T", type=int)
    p.add_argument("--D", type=int)
    p.add_argument("--all-variants", dest="all_variants", action="store_true")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None, environ=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve_settings(args, environ)
        return args.func(args, settings)
    except RECOVERABLE as exc:
        print(f"saits {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
