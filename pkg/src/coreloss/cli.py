"""Command-line entry point: ``coreloss <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data or model-file error, 3 numeric failure.
Log verbosity comes from the ``CORELOSS_LOG`` environment variable (DEBUG, INFO, ...).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_open, atomic_write_text
from .data import (
    Dataset,
    GeneratorConfig,
    SplitSpec,
    load_csv,
    load_split,
    save_csv,
    save_split,
    split_indices,
    synth_dataset,
)
from .errors import CoreLossError, DataError, ModelFileError, NumericalError
from .evaluation import (
    HISTOGRAM_BIN_WIDTH,
    MetricsReport,
    error_histogram,
    write_histogram_csv,
    write_metrics_csv,
    write_residuals_csv,
)
from .modelio import load_model, save_model
from .neural import TrainConfig
from .pipeline import (
    BoostedTreesModel,
    HybridModel,
    IgseLossModel,
    MlpLstmModel,
    MnnModel,
    RandomForestModel,
    SteinmetzModel,
    material_table,
)
from .trees import ForestParams, GbtParams
from .waveform import FEATURE_NAMES, feature_matrix

log = logging.getLogger("coreloss")

LOG_ENV = "CORELOSS_LOG"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SUBSETS = ("train", "validation", "test", "all")

# Defaults for every tunable; a --config JSON file overrides these and flags override both.
DEFAULTS = {
    "seed": 0,
    "split": {"train": 0.70, "validation": 0.15, "test": 0.15},
    "generator": GeneratorConfig().to_dict(),
    "rf": {"params": {"n_estimators": 100, "min_samples_split": 2, "min_samples_leaf": 1,
                      "max_features": None, "max_depth": None, "bootstrap": True},
           "target": "log"},
    "gbt": {"params": {"num_boost_round": 10000, "early_stopping_rounds": 50, "max_depth": 6,
                       "learning_rate": 0.01, "reg_lambda": 1.0, "gamma": 0.0, "min_samples_leaf": 1},
            "target": "log"},
    "mnn": {"arch": {}, "train": {"epochs": 1000, "patience": 20, "learning_rate": 1e-3, "batch_size": 64}},
    "mlp-lstm": {"arch": {}, "train": {"epochs": 10000, "patience": 50, "learning_rate": 1e-3, "batch_size": 64}},
}  # fmt: skip


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path) -> dict:
    if path is None:
        return json.loads(json.dumps(DEFAULTS))
    try:
        user = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise DataError(f"config {path} must hold a JSON object")
    unknown = set(user) - set(DEFAULTS)
    if unknown:
        raise DataError(f"config {path} has unknown section(s) {sorted(unknown)}")
    return _merge(DEFAULTS, user)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import scipy

    return {"coreloss": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


class Run:
    """Collects what a command read, wrote and measured, for its manifest."""

    def __init__(self, command: str, argv, config: dict, seed: int):
        self.command = command
        self.argv = list(argv)
        self.config = config
        self.seed = seed
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.metrics: dict = {}
        self.started = time.time()

    def read(self, path):
        self.inputs[str(path)] = _sha256(path)

    def wrote(self, path):
        self.outputs.append(str(path))

    def write_manifest(self, path):
        doc = {
            "command": self.command,
            "argv": self.argv,
            "seed": self.seed,
            "config": self.config,
            "versions": _versions(),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "metrics": self.metrics,
            "elapsed_seconds": round(time.time() - self.started, 3),
        }
        atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n")


# -- shared helpers --------------------------------------------------------------------


def _dataset(run: Run, path, require_loss=True) -> Dataset:
    try:
        ds = load_csv(path, require_loss=require_loss)
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc.strerror}") from exc
    run.read(path)
    if len(ds) == 0:
        raise DataError(f"{path} holds no samples")
    return ds


def _split_spec(config: dict, seed: int) -> SplitSpec:
    s = config["split"]
    return SplitSpec(s["train"], s["validation"], s["test"], seed)


def _partition(run: Run, ds: Dataset, args, config) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if getattr(args, "split", None):
        run.read(args.split)
        return load_split(args.split, len(ds))
    return split_indices(len(ds), _split_spec(config, args.seed))


def _subset(ds: Dataset, parts, name: str) -> Dataset:
    if name == "all":
        return ds
    return ds.take(parts[SUBSETS.index(name)])


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path, header, rows):
    with atomic_open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _metrics_summary(report) -> dict:
    return {"n": report.n, "mse": report.mse, "mape_pct": report.mape,
            "max_ape_pct": report.max_ape, "r2": report.r2}


def _write_evaluation(run: Run, out: Path, name: str, model, ds: Dataset):
    pred = model.predict(ds)
    report = MetricsReport.compute(ds.loss, pred)
    metrics_path = out / f"{name}_metrics.csv"
    write_metrics_csv(metrics_path, [report.row(name)])
    edges, counts = error_histogram(ds.loss, pred)
    hist_path = out / f"{name}_histogram.csv"
    write_histogram_csv(hist_path, edges, counts, HISTOGRAM_BIN_WIDTH)
    resid_path = out / f"{name}_residuals.csv"
    write_residuals_csv(resid_path, ds.loss, pred, ds.materials, ds.waveform_classes)
    for p in (metrics_path, hist_path, resid_path):
        run.wrote(p)
    run.metrics[name] = _metrics_summary(report)
    return report


# -- commands --------------------------------------------------------------------------


def cmd_synth(args, config, run: Run):
    gen = dict(config["generator"])
    if args.n_samples is not None:
        gen["n_samples"] = args.n_samples
    if args.noise is not None:
        gen["noise"] = args.noise
    if args.waveforms:
        gen["waveform_classes"] = args.waveforms
    if args.materials:
        unknown = set(args.materials) - set(gen["coeffs"])
        if unknown:
            raise DataError(f"no planted coefficients for material(s) {sorted(unknown)}")
        gen["coeffs"] = {m: gen["coeffs"][m] for m in args.materials}
    if args.temp_coeff is not None:
        gen["temp_coeff"] = args.temp_coeff
    gen_config = GeneratorConfig.from_dict(gen)
    run.config = {**config, "generator": gen_config.to_dict()}
    ds = synth_dataset(gen_config, args.seed)
    save_csv(ds, args.out)
    run.wrote(args.out)
    run.metrics = {"n_samples": len(ds), "materials": list(ds.material_vocab)}
    print(f"wrote {len(ds)} samples to {args.out}")
    return Path(str(args.out) + ".manifest.json")


def cmd_ingest_check(args, config, run: Run):
    ds = _dataset(run, args.data, require_loss=not args.allow_unlabeled)
    counts = {m: int(np.sum(np.asarray(ds.materials) == m)) for m in ds.material_vocab}
    waves = {w: int(np.sum(np.asarray(ds.waveform_classes) == w)) for w in ds.waveform_vocab}
    summary = {
        "samples": len(ds),
        "materials": counts,
        "waveforms": waves,
        "temperature_C": [float(ds.temperature.min()), float(ds.temperature.max())],
        "frequency_Hz": [float(ds.frequency.min()), float(ds.frequency.max())],
        "labeled": bool(ds.labeled),
    }
    print(json.dumps(summary, indent=2))
    run.metrics = summary
    return None


def cmd_features(args, config, run: Run):
    if args.names:
        for name in FEATURE_NAMES:
            print(name)
        return None
    if not args.data or not args.out:
        raise UsageError("features: --data and --out are required unless --names is given")
    ds = _dataset(run, args.data, require_loss=False)
    X = feature_matrix(ds.waveforms())
    _write_rows(args.out, ("index", "material", "waveform", *FEATURE_NAMES),
                ([i, ds.materials[i], ds.waveform_classes[i], *map(float, X[i])] for i in range(len(ds))))
    run.wrote(args.out)
    print(f"wrote {X.shape[0]} x {X.shape[1]} features to {args.out}")
    return Path(str(args.out) + ".manifest.json")


def _fit_empirical(args, config, run: Run, model, name: str, waveform: str | None):
    ds = _dataset(run, args.data)
    if args.material:
        mask = np.isin(np.asarray(ds.materials), args.material)
        if not mask.any():
            raise DataError(f"no rows for material(s) {args.material}")
        ds = ds.where(mask)
    out = _out_dir(args)
    parts = _partition(run, ds, args, config)
    train, test = _subset(ds, parts, "train"), _subset(ds, parts, "test")
    model.fit(train)
    model_path = out / f"{name}.model.json"
    save_model(model, model_path)
    run.wrote(model_path)
    rows = material_table(model, test, waveform)
    table_path = out / f"{name}_coefficients.csv"
    _write_rows(table_path, ("material", "k", "a", "b", "n", "mape_pct", "max_ape_pct", "r2"),
                ([r[c] for c in ("material", "k", "a", "b", "n", "mape_pct", "max_ape_pct", "r2")] for r in rows))
    run.wrote(table_path)
    run.metrics = {r["material"]: {k: v for k, v in r.items() if k != "material"} for r in rows}
    for material in train.material_vocab:
        c = model.coeffs[material] if name == "se" else model.models[material].coeffs
        print(f"{material}: k={c.k!r} a={c.a!r} b={c.b!r}")
    return out / f"{name}.manifest.json"


def cmd_fit_se(args, config, run: Run):
    return _fit_empirical(args, config, run, SteinmetzModel(refine=args.refine), "se", "sine")


def cmd_fit_igse(args, config, run: Run):
    return _fit_empirical(args, config, run, IgseLossModel(max_iter=args.max_iter), "igse", None)


def _build_model(kind: str, args, config: dict):
    section = config[kind]
    seed = args.seed
    if kind in ("rf", "gbt"):
        params = dict(section["params"])
        for key in ("n_estimators", "max_features", "num_boost_round", "early_stopping_rounds",
                    "max_depth", "learning_rate"):
            value = getattr(args, key, None)
            if value is not None and key in params:
                params[key] = value
        target = args.target or section["target"]
        if kind == "rf":
            return RandomForestModel(ForestParams(**params), seed, target)
        return BoostedTreesModel(GbtParams(**params), seed, target)
    train_cfg = dict(section["train"])
    for key in ("epochs", "patience", "learning_rate", "batch_size"):
        value = getattr(args, key, None)
        if value is not None:
            train_cfg[key] = value
    cls = MnnModel if kind == "mnn" else MlpLstmModel
    return cls(section["arch"], TrainConfig(seed=seed, **train_cfg), seed)


def cmd_train(args, config, run: Run):
    ds = _dataset(run, args.data)
    out = _out_dir(args)
    parts = _partition(run, ds, args, config)
    model = _build_model(args.model, args, config)
    run.config = {**config, "model": args.model}
    train, val = _subset(ds, parts, "train"), _subset(ds, parts, "validation")
    model.fit(train, val)
    split_path = out / "split.json"
    save_split(split_path, parts, _split_spec(config, args.seed), len(ds))
    run.wrote(split_path)
    model_path = out / f"{args.model}.model.json"
    save_model(model, model_path)
    run.wrote(model_path)
    if args.model in ("mnn", "mlp-lstm"):
        hist = model.history
        path = out / f"{args.model}_history.csv"
        _write_rows(path, ("epoch", "train_mse", "val_mse"),
                    ((i + 1, t, v) for i, (t, v) in enumerate(zip(hist.train_loss, hist.val_loss))))
        run.wrote(path)
        run.metrics["best_epoch"] = hist.best_epoch
    elif args.model == "gbt":
        e = model.ensemble
        path = out / "gbt_history.csv"
        _write_rows(path, ("round", "train_mse", "val_mse"),
                    ((i, t, v) for i, (t, v) in enumerate(zip(e.train_mse, e.valid_mse))))
        run.wrote(path)
        run.metrics["best_iteration"] = e.best_iteration
    report = model.evaluate(val)
    run.metrics["validation"] = _metrics_summary(report)
    print(f"{args.model}: validation R2={report.r2:.4f} MAPE={report.mape:.2f}% -> {model_path}")
    return out / f"{args.model}.manifest.json"


def cmd_hybrid(args, config, run: Run):
    ds = _dataset(run, args.data)
    out = _out_dir(args)
    parts = _partition(run, ds, args, config)
    for path in (args.first, args.second):
        run.read(path)
    first, second = load_model(args.first), load_model(args.second)
    model = HybridModel(first, second).fit(None, _subset(ds, parts, "validation"))
    model_path = out / "hybrid.model.json"
    save_model(model, model_path)
    run.wrote(model_path)
    w = model.weights
    weights_path = out / "hybrid_weights.csv"
    _write_rows(weights_path, ("first", "second", "w1", "w2", "val_mse"), [(first.kind, second.kind, w.w1, w.w2, w.val_mse)])
    run.wrote(weights_path)
    run.metrics = w.to_dict()
    print(f"hybrid: w1={w.w1:.4f} ({first.kind}) w2={w.w2:.4f} ({second.kind}) validation MSE={w.val_mse:.6g}")
    return out / "hybrid.manifest.json"


def cmd_evaluate(args, config, run: Run):
    ds = _dataset(run, args.data)
    run.read(args.model)
    model = load_model(args.model)
    out = _out_dir(args)
    part = _subset(ds, _partition(run, ds, args, config), args.subset)
    name = args.name or model.kind
    report = _write_evaluation(run, out, name, model, part)
    print(f"{name} on {args.subset}: MSE={report.mse:.6g} MAPE={report.mape:.3f}% "
          f"MaxAPE={report.max_ape:.3f}% R2={report.r2:.5f}")
    return out / f"{name}_evaluate.manifest.json"


def cmd_predict(args, config, run: Run):
    ds = _dataset(run, args.data, require_loss=False)
    run.read(args.model)
    model = load_model(args.model)
    pred = model.predict(ds)
    _write_rows(args.out, ("index", "material", "waveform", "pred_W_per_m3"),
                ([i, ds.materials[i], ds.waveform_classes[i], float(pred[i])] for i in range(len(ds))))
    run.wrote(args.out)
    print(f"wrote {len(ds)} predictions to {args.out}")
    return Path(str(args.out) + ".manifest.json")


def cmd_report(args, config, run: Run):
    ds = _dataset(run, args.data)
    out = _out_dir(args)
    part = _subset(ds, _partition(run, ds, args, config), args.subset)
    rows = []
    for path in args.models:
        run.read(path)
        model = load_model(path)
        name = Path(path).name.split(".")[0]
        report = _write_evaluation(run, out, name, model, part)
        rows.append(report.row(name))
    table = out / "report_metrics.csv"
    write_metrics_csv(table, rows)
    run.wrote(table)
    for row in rows:
        print(f"{row['model']:>12s}  MSE={row['mse']:.6g}  MAPE={row['mape_pct']:.3f}%  "
              f"MaxAPE={row['max_ape_pct']:.3f}%  R2={row['r2']:.5f}")
    return out / "report.manifest.json"


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="coreloss", description="Magnetic core loss modelling toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def common(sp, data=True, split=True):
        sp.add_argument("--config", help="JSON config file; flags override it")
        sp.add_argument("--seed", type=int, default=None, help="master seed (default from config, 0)")
        if data:
            sp.add_argument("--data", required=True, help="dataset CSV")
        if split:
            sp.add_argument("--split", help="split sidecar JSON; default: recompute from the seed")

    s = sub.add_parser("synth", help="generate a planted-truth synthetic dataset")
    common(s, data=False, split=False)
    s.add_argument("--out", required=True)
    s.add_argument("--n-samples", type=int)
    s.add_argument("--noise", type=float, help="std of the multiplicative log-normal noise")
    s.add_argument("--waveforms", nargs="+", choices=("sine", "triangular", "trapezoidal"))
    s.add_argument("--materials", nargs="+")
    s.add_argument("--temp-coeff", type=float)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest-check", help="validate a dataset CSV and summarize it")
    common(s, split=False)
    s.add_argument("--allow-unlabeled", action="store_true")
    s.set_defaults(func=cmd_ingest_check)

    s = sub.add_parser("features", help="write the 33 sequence features as CSV")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--data")
    s.add_argument("--out")
    s.add_argument("--names", action="store_true", help="print the feature names in order and exit")
    s.set_defaults(func=cmd_features)

    for name, func, help_text in (("fit-se", cmd_fit_se, "fit per-material Steinmetz coefficients"),
                                  ("fit-igse", cmd_fit_igse, "fit per-material iGSE coefficients")):
        s = sub.add_parser(name, help=help_text)
        common(s)
        s.add_argument("--out-dir", required=True)
        s.add_argument("--material", nargs="+", help="restrict to these materials")
        if name == "fit-se":
            s.add_argument("--refine", action="store_true", help="Gauss-Newton refinement on relative error")
        else:
            s.add_argument("--max-iter", type=int, default=2000)
        s.set_defaults(func=func)

    s = sub.add_parser("train", help="train a learned model")
    common(s)
    s.add_argument("--model", required=True, choices=("rf", "gbt", "mnn", "mlp-lstm"))
    s.add_argument("--out-dir", required=True)
    s.add_argument("--target", choices=("log", "none"), help="tree target transform")
    s.add_argument("--n-estimators", type=int)
    s.add_argument("--max-features", type=int)
    s.add_argument("--num-boost-round", type=int)
    s.add_argument("--early-stopping-rounds", type=int)
    s.add_argument("--max-depth", type=int)
    s.add_argument("--learning-rate", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--batch-size", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("hybrid", help="fit blend weights of two trained models on the validation split")
    common(s)
    s.add_argument("--first", required=True, help="model file weighted by w1")
    s.add_argument("--second", required=True, help="model file weighted by w2")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_hybrid)

    s = sub.add_parser("evaluate", help="metrics, error histogram and residuals for one model")
    common(s)
    s.add_argument("--model", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--subset", choices=SUBSETS, default="test")
    s.add_argument("--name", help="label used in output file names")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("predict", help="predict losses for a (possibly unlabeled) CSV")
    common(s, split=False)
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("report", help="metrics table over several models")
    common(s)
    s.add_argument("--models", nargs="+", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--subset", choices=SUBSETS, default="test")
    s.set_defaults(func=cmd_report)
    return p


def _configure_logging():
    level_name = os.environ.get(LOG_ENV, "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger("coreloss").setLevel(level)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
        config = load_config(args.config)
        if args.seed is None:
            args.seed = int(config["seed"])
        config["seed"] = args.seed
        run = Run(args.command, argv, config, args.seed)
        if getattr(args, "config", None):
            run.read(args.config)
        manifest = args.func(args, config, run)
        if manifest is not None:
            run.write_manifest(manifest)
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CoreLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
