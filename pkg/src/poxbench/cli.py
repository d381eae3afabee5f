"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or contract error, 3 leakage
audit failure. Diagnostics are a single line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .augment import AugmentPolicy, augment_training_set
from .classifiers import MODEL_KINDS, describe, load_model, predict, save_model, train_model
from .dataset import load_manifest, stratified_holdout, write_manifest
from .errors import LeakageError, PoxbenchError, UsageError
from .experiment import (
    PROTOCOLS,
    SMOTEENN_MODES,
    VARIANTS,
    ExperimentConfig,
    compare_variants,
    load_config,
    run_experiment,
    run_leaky,
)
from .features import BackboneSpec, StubSpec, cache_load, cache_store, cached_extract
from .metrics import METRIC_NAMES, evaluate
from .report import comparison_csv, emit_boxplot_data, load_report, report_text, write_report
from .resample import LabeledFeatures, ResampleConfig, dump_resampled, smoteenn

log = logging.getLogger("poxbench")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_LEAKAGE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """Raise instead of exiting so every usage problem maps to exit code 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _feature_spec(args) -> StubSpec | BackboneSpec:
    if args.backbone:
        return BackboneSpec(Path(args.backbone))
    return StubSpec(d=args.stub_dim, seed=args.stub_seed)


def _add_feature_flags(p: argparse.ArgumentParser, defaults: bool = True) -> None:
    g = p.add_argument_group("features")
    g.add_argument("--backbone", metavar="ONNX", help="backbone model file; omit to use the stub extractor")
    g.add_argument("--stub-dim", type=int, default=256 if defaults else None, help="stub feature dimension")
    g.add_argument("--stub-seed", type=int, default=0 if defaults else None, help="stub projection seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="poxbench", description="Deep-feature skin-lesion classification benchmark.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug output")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("extract", help="extract (or load cached) features for a manifest")
    p.add_argument("--manifest", required=True, help="manifest file or corpus directory")
    p.add_argument("--out", required=True, help="feature file to write")
    p.add_argument("--cache", help="cache directory (default: $POXBENCH_CACHE or ./.poxbench_cache)")
    _add_feature_flags(p)

    p = sub.add_parser("augment", help="write augmented copies of the training images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory (images and manifest.tsv)")
    p.add_argument("--copies", type=int, default=6, help="augmented copies per image (default 6)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--holdout-fraction", type=float, default=0.10,
                   help="hold-out share left untouched (default 0.10)")
    p.add_argument("--all", action="store_true",
                   help="augment every image, hold-out included (the leaky practice; for demonstrations only)")
    p.add_argument("--vflip", action="store_true", help="also allow vertical flips")

    p = sub.add_parser("resample", help="SMOTE+ENN on a feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True, help="manifest the feature row ids refer to")
    p.add_argument("--out", required=True)
    p.add_argument("--k-smote", type=int, default=5)
    p.add_argument("--k-enn", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train one model on a feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True, choices=MODEL_KINDS)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--config", help="experiment config whose [logreg]/[mlp]/[svm] section to use")
    p.add_argument("--seed", type=int)
    p.add_argument("--describe", action="store_true", help="print shapes and sparsity of the trained model")

    p = sub.add_parser("eval", help="score a saved model on a feature file")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="metrics CSV to write")
    p.add_argument("--describe", action="store_true", help="print shapes and sparsity of the model")

    p = sub.add_parser("experiment", help="run a full experiment and write its report")
    p.add_argument("--config", help="experiment config file; explicit flags override it")
    p.add_argument("--manifest")
    p.add_argument("--name")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--models", help="comma-separated subset of logreg,mlp,svm")
    p.add_argument("--k", type=int)
    p.add_argument("--holdout-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--smoteenn-mode", choices=SMOTEENN_MODES)
    p.add_argument("--correction", choices=("none", "holm"))
    p.add_argument("--cache")
    p.add_argument("--out", default="out", help="output root; artifacts go to OUT/<name>/ (default: out)")
    p.add_argument("--svg", action="store_true", help="also draw boxplot.svg (needs matplotlib)")
    _add_feature_flags(p, defaults=False)

    p = sub.add_parser("compare", help="rank-test kappa vectors across experiment outputs")
    p.add_argument("runs", nargs="+", help="experiment output directories (or report.json files)")
    p.add_argument("--out", help="CSV file for the comparison table")
    p.add_argument("--alpha", type=float, default=0.05)

    p = sub.add_parser("report", help="rebuild report.txt and boxplot data from report.json")
    p.add_argument("run", help="experiment output directory")
    p.add_argument("--svg", action="store_true")
    return parser


# --------------------------------------------------------------------------- #
# subcommands
# --------------------------------------------------------------------------- #


def _cmd_extract(args) -> int:
    manifest = load_manifest(args.manifest)
    fm = cached_extract(manifest, _feature_spec(args), args.cache or None)
    cache_store(fm, args.out)
    print(f"wrote {fm.n} x {fm.d} features to {args.out}")
    return EXIT_OK


def _cmd_augment(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.all:
        indices = list(range(len(manifest)))
        log.warning("augmenting every image including the hold-out; results from this set are leaky")
    else:
        indices = list(stratified_holdout(manifest, args.holdout_fraction, args.seed).train_indices)
    out = Path(args.out)
    policy = AugmentPolicy(copies_per_image=args.copies, allow_vflip=args.vflip)
    aug = augment_training_set(manifest, indices, policy, args.seed, out)
    write_manifest(aug, out / "manifest.tsv")
    with open(out / "provenance.tsv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["row", "source_row", "copy", "checksum"])
        for i, r in enumerate(aug.records):
            w.writerow([i, "" if r.source is None else r.source, "" if r.copy is None else r.copy, r.checksum])
    print(f"{len(indices)} originals + {len(aug) - len(indices)} copies -> {out / 'manifest.tsv'}")
    return EXIT_OK


def _labels_for(fm, manifest, features_path: str) -> np.ndarray:
    """Labels for feature rows: manifest labels, or the resampling sidecar."""
    side = Path(features_path + ".provenance.tsv")
    if side.exists():
        with open(side, encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh, delimiter="\t"))
        by_id = {int(r["row_id"]): int(r["label"]) for r in rows}
        return np.array([by_id[int(i)] for i in fm.row_ids], dtype=np.int64)
    if fm.row_ids.size and (fm.row_ids.min() < 0 or fm.row_ids.max() >= len(manifest)):
        raise UsageError(f"{features_path} row ids do not index {len(manifest)} manifest records")
    return manifest.labels[fm.row_ids]


def _cmd_resample(args) -> int:
    manifest = load_manifest(args.manifest)
    fm = cache_load(args.features)
    data = LabeledFeatures.from_rows(fm.data, _labels_for(fm, manifest, args.features), fm.row_ids)
    res = smoteenn(data, ResampleConfig(k_smote=args.k_smote, k_enn=args.k_enn, seed=args.seed), len(manifest.classes))
    path, side = dump_resampled(res, args.out, fm.spec_digest)
    for stage, before, after in res.stages:
        print(f"{stage}: {before} -> {after}")
    print(f"wrote {len(res)} rows to {path} (provenance in {side})")
    return EXIT_OK


def _cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    fm = cache_load(args.features)
    y = _labels_for(fm, manifest, args.features)
    cfg = load_config(args.config).model_config(args.model) if args.config else None
    if cfg is None:
        cfg = getattr(ExperimentConfig(), args.model)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    model = train_model(args.model, np.asarray(fm.data, dtype=np.float64), y, cfg, tuple(manifest.classes))
    save_model(model, args.out)
    print(f"trained {args.model} on {fm.n} rows -> {args.out}")
    if args.describe:
        print(describe(model))
    return EXIT_OK


def _cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    fm = cache_load(args.features)
    model = load_model(args.model)
    if args.describe:
        print(describe(model))
    y = _labels_for(fm, manifest, args.features)
    rec = evaluate(y, predict(model, fm.data), len(manifest.classes), model=model.kind)
    for name in METRIC_NAMES:
        print(f"{name}: {getattr(rec, name):.4f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model"] + list(METRIC_NAMES))
            w.writerow([model.kind] + [repr(getattr(rec, n)) for n in METRIC_NAMES])
    return EXIT_OK


def experiment_config(args) -> ExperimentConfig:
    """Config file (if any) with explicitly given flags taking precedence."""
    overrides = {
        "manifest": args.manifest,
        "name": args.name,
        "variant": args.variant,
        "protocol": args.protocol,
        "models": tuple(m.strip() for m in args.models.split(",") if m.strip()) if args.models else None,
        "k": args.k,
        "holdout_fraction": args.holdout_fraction,
        "seed": args.seed,
        "smoteenn_mode": args.smoteenn_mode,
        "correction": args.correction,
        "cache": args.cache,
    }
    cfg = load_config(args.config, overrides) if args.config else replace(
        ExperimentConfig(), **{k: v for k, v in overrides.items() if v is not None}
    )
    feat = {}
    if args.backbone:
        feat.update(kind="backbone", model=args.backbone)
    if args.stub_dim is not None:
        feat.update(kind="stub", dim=args.stub_dim)
    if args.stub_seed is not None:
        feat["seed"] = args.stub_seed
    if feat:
        cfg = replace(cfg, features=replace(cfg.features, **feat))
    if cfg.protocol == "leaky" and cfg.variant != "augmented":
        raise UsageError(f"--protocol leaky requires --variant augmented (got {cfg.variant})")
    return cfg


def _cmd_experiment(args) -> int:
    cfg = experiment_config(args)
    report = run_leaky(cfg) if cfg.protocol == "leaky" else run_experiment(cfg)
    out = write_report(report, Path(args.out) / cfg.name, svg=args.svg)
    sys.stdout.write(report_text(report))
    print(f"artifacts in {out}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    reports = [load_report(r) for r in args.runs]
    comparisons = compare_variants(reports, args.alpha)
    text = comparison_csv(comparisons, [r.config_digest for r in reports])
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    for c in comparisons:
        flag = "significant" if c.result.reject else "not significant"
        print(f"{c.model}: {c.first} {c.direction} {c.second}  p={c.result.p_value:.4f} [{c.result.method}] {flag}")
    return EXIT_OK


def _cmd_report(args) -> int:
    run = Path(args.run)
    report = load_report(run)
    (run / "report.txt").write_text(report_text(report), encoding="utf-8")
    emit_boxplot_data(report, run / "boxplot.csv", run / "boxplot.svg" if args.svg else None)
    print(f"rewrote report.txt and boxplot.csv in {run}")
    return EXIT_OK


COMMANDS = {
    "extract": _cmd_extract,
    "augment": _cmd_augment,
    "resample": _cmd_resample,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "experiment": _cmd_experiment,
    "compare": _cmd_compare,
    "report": _cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LeakageError as exc:
        print(f"leakage: {exc}", file=sys.stderr)
        return EXIT_LEAKAGE
    except PoxbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
