"""Experiment orchestration: hold-out split, per-fold preprocessing, training,
scoring on the fixed test set, aggregation, significance and leakage audit.

Honest protocol, per fold ``f`` of the k-fold split of the non-test pool:

* ``original``: train on the feature rows of the k-1 training folds.
* ``augmented``: the training folds' images plus their augmented copies.
  Copies are generated once for the whole pool; each (source, copy) has its
  own RNG stream, so fold f sees exactly what augmenting its own images
  would have produced.
* ``smoteenn``: SMOTE then ENN on the training folds' feature rows
  (``per-fold``), or once on the whole pool followed by a fresh fold split
  of the resampled rows (``whole-pool``).

Every model is scored on the same hold-out rows, which never pass through
augmentation or resampling. The leaky protocol instead augments the whole
corpus before splitting it, and is only ever reported next to an honest run.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import _env
from .augment import AugmentPolicy, augment_training_set
from .classifiers import LogRegConfig, MlpConfig, SvmConfig, predict, train_model
from .classifiers._common import derive_seed
from .dataset import DatasetManifest, SplitPlan, assign_folds, largest_remainder, load_manifest, split_manifest
from .errors import ConfigurationError, InputError, LeakageError, MetricsError, UsageError
from .features import BackboneSpec, FeatureMatrix, StubSpec, cached_extract
from .metrics import METRIC_NAMES, Aggregate, MetricRecord, aggregate, evaluate
from .resample import LabeledFeatures, ResampleConfig, smoteenn
from .stats import EXACT_MAX_N, SignificanceMatrix, TestResult, mann_whitney_u, pairwise_significance

VARIANTS = ("original", "smoteenn", "augmented")
PROTOCOLS = ("honest", "leaky")
MODELS = ("logreg", "mlp", "svm")
SMOTEENN_MODES = ("per-fold", "whole-pool")
# train : validation : test image counts of the criticised augment-then-split setup
LEAKY_RATIOS = (5560, 1391, 1738)


@dataclass(frozen=True)
class FeatureSource:
    kind: str = "stub"  # "stub" | "backbone"
    dim: int = 256  # stub output dimension
    seed: int = 0  # stub projection seed
    model: str = ""  # ONNX file for the backbone
    batch_size: int = 16

    def __post_init__(self):
        if self.kind not in ("stub", "backbone"):
            raise ConfigurationError(f"feature kind must be 'stub' or 'backbone', got {self.kind!r}")
        if self.kind == "backbone" and not self.model:
            raise ConfigurationError("backbone features need a model path")

    def spec(self) -> StubSpec | BackboneSpec:
        if self.kind == "stub":
            return StubSpec(d=self.dim, seed=self.seed)
        return BackboneSpec(Path(self.model), batch_size=self.batch_size)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    manifest: str = ""
    variant: str = "original"
    protocol: str = "honest"
    models: tuple[str, ...] = MODELS
    k: int = 10
    holdout_fraction: float = 0.10
    seed: int = 0
    smoteenn_mode: str = "per-fold"
    alpha: float = 0.05
    correction: str = "none"
    exact_max_n: int = EXACT_MAX_N
    cache: str = ""  # empty -> POXBENCH_CACHE or ./.poxbench_cache
    features: FeatureSource = FeatureSource()
    augment: AugmentPolicy = AugmentPolicy()
    resample: ResampleConfig = ResampleConfig()
    logreg: LogRegConfig = LogRegConfig()
    mlp: MlpConfig = MlpConfig()
    svm: SvmConfig = SvmConfig()

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.protocol not in PROTOCOLS:
            raise ConfigurationError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.smoteenn_mode not in SMOTEENN_MODES:
            raise ConfigurationError(f"smoteenn_mode must be one of {SMOTEENN_MODES}, got {self.smoteenn_mode!r}")
        models = tuple(self.models)
        if not models:
            raise ConfigurationError("at least one model is required")
        unknown = [m for m in models if m not in MODELS]
        if unknown or len(set(models)) != len(models):
            raise ConfigurationError(f"models must be distinct entries of {MODELS}, got {models}")
        object.__setattr__(self, "models", models)
        if self.k < 2:
            raise ConfigurationError(f"k must be >= 2, got {self.k}")

    def model_config(self, kind: str):
        return getattr(self, kind)

    def cache_dir(self) -> Path:
        return _env.cache_dir(self.cache or None)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["models"] = list(self.models)
        if d["resample"]["target"] is not None:
            d["resample"]["target"] = {str(k): v for k, v in d["resample"]["target"].items()}
        d["mlp"]["hidden"] = list(self.mlp.hidden)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ExperimentConfig:
        d = dict(d)
        nested = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, value in d.items():
            if key not in nested:
                raise ConfigurationError(f"unknown experiment setting {key!r}")
            if key in _SECTION_TYPES:
                value = dict(value)
                if key == "mlp" and "hidden" in value:
                    value["hidden"] = tuple(value["hidden"])
                if key == "resample" and value.get("target") is not None:
                    value["target"] = {int(k): int(v) for k, v in value["target"].items()}
                value = _SECTION_TYPES[key](**value)
            elif key == "models":
                value = tuple(value)
            kw[key] = value
        return cls(**kw)

    def digest(self) -> str:
        """sha256 of the canonical JSON form; embedded in every artifact.

        The cache directory is left out: it changes where features are
        stored, never what they are.
        """
        d = self.to_dict()
        d.pop("cache", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


_SECTION_TYPES = {
    "features": FeatureSource,
    "augment": AugmentPolicy,
    "resample": ResampleConfig,
    "logreg": LogRegConfig,
    "mlp": MlpConfig,
    "svm": SvmConfig,
}


def _coerce(raw: str, default: Any, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "yes", "1", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            return tuple(int(s) for s in items) if default and isinstance(default[0], int) else tuple(items)
        if default is None:
            if raw.lower() in ("", "none", "auto"):
                return None
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"{where}: cannot parse {raw!r}") from None
    return raw


def _parse_target(raw: str, where: str) -> dict[int, int] | None:
    """``"0:300, 1:300"`` -> {0: 300, 1: 300}; empty or ``none`` -> None."""
    raw = raw.strip()
    if raw.lower() in ("", "none", "auto"):
        return None
    try:
        return {int(c): int(n) for c, n in (item.split(":") for item in raw.split(","))}
    except ValueError:
        raise ConfigurationError(f"{where}: expected 'class:count, ...', got {raw!r}") from None


def load_config(path: Path | str, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Read an INI-style experiment file.

    ``[experiment]`` holds top-level keys; ``[features]``, ``[augment]``,
    ``[resample]``, ``[logreg]``, ``[mlp]`` and ``[svm]`` hold the nested
    settings. ``overrides`` (top-level keys) win over the file.
    """
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with path.open(encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from exc
    base = ExperimentConfig()
    top = {f.name for f in fields(ExperimentConfig)} - set(_SECTION_TYPES)
    kw: dict[str, Any] = {}
    for section in parser.sections():
        if section == "experiment":
            for key, raw in parser.items(section):
                if key not in top:
                    raise ConfigurationError(f"{path}: unknown key {key!r} in [experiment]")
                kw[key] = _coerce(raw, getattr(base, key), f"{path} [experiment] {key}")
        elif section in _SECTION_TYPES:
            current = getattr(base, section)
            known = {f.name for f in fields(current)}
            sub = {}
            for key, raw in parser.items(section):
                if key not in known:
                    raise ConfigurationError(f"{path}: unknown key {key!r} in [{section}]")
                if section == "resample" and key == "target":
                    sub[key] = _parse_target(raw, f"{path} [resample] target")
                else:
                    sub[key] = _coerce(raw, getattr(current, key), f"{path} [{section}] {key}")
            kw[section] = replace(current, **sub)
        else:
            raise ConfigurationError(f"{path}: unknown section [{section}]")
    for key in ("manifest", "cache"):
        if kw.get(key) and not Path(kw[key]).is_absolute():
            kw[key] = str((path.parent / kw[key]).resolve())
    kw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return replace(base, **kw)


# --------------------------------------------------------------------------- #
# report types
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class AuditResult:
    """Outcome of tracing every training row back to the original images."""

    passed: bool
    mode: str
    checked_rows: int
    test_size: int
    violations: tuple[str, ...] = ()
    contamination: float | None = None  # leaky runs: share of test rows with a relative in training

    def summary(self) -> str:
        if self.mode == "leaky":
            return (
                f"LEAKY protocol: {self.contamination:.2%} of {self.test_size} test rows share a source image "
                f"with training rows"
            )
        state = "PASSED" if self.passed else "FAILED"
        text = f"leakage audit {state}: {self.checked_rows} training rows traced, {self.test_size} test images"
        return text if self.passed else text + "; " + "; ".join(self.violations[:5])


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    config_digest: str
    split_summary: dict
    stage_sizes: dict
    records: list[MetricRecord]
    validation_records: list[MetricRecord]
    aggregates: dict  # model -> metric -> Aggregate
    significance: SignificanceMatrix | None
    audit: AuditResult
    timings: dict = field(default_factory=dict)
    test_digest: str = ""
    honest: ExperimentReport | None = None  # leaky runs carry their paired honest run

    @property
    def leaky(self) -> bool:
        return self.config.protocol == "leaky"

    @property
    def variant(self) -> str:
        return self.config.variant

    @property
    def models(self) -> tuple[str, ...]:
        return self.config.models

    def model_records(self, model: str) -> list[MetricRecord]:
        return sorted((r for r in self.records if r.model == model), key=lambda r: r.fold)

    def kappas(self, model: str) -> list[float]:
        return [r.kappa for r in self.model_records(model)]

    def overestimation(self) -> dict[str, dict[str, float]]:
        """Leaky minus honest mean, per model and metric."""
        if self.honest is None:
            return {}
        return {
            m: {
                k: self.aggregates[m][k].mean - self.honest.aggregates[m][k].mean
                for k in ("accuracy", "kappa")
            }
            for m in self.models
        }

    def to_dict(self) -> dict:
        """Deterministic content only; wall-clock timings are left out."""
        def rec(r: MetricRecord) -> dict:
            return asdict(r)

        out = {
            "protocol": self.config.protocol,
            "leaky": self.leaky,
            "config_digest": self.config_digest,
            "config": self.config.to_dict(),
            "split_summary": self.split_summary,
            "stage_sizes": self.stage_sizes,
            "test_digest": self.test_digest,
            "records": [rec(r) for r in self.records],
            "validation_records": [rec(r) for r in self.validation_records],
            "audit": asdict(self.audit),
        }
        if self.honest is not None:
            out["honest"] = self.honest.to_dict()
            out["overestimation"] = self.overestimation()
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ExperimentReport:
        cfg = ExperimentConfig.from_dict(d["config"])
        records = [MetricRecord(**r) for r in d["records"]]
        audit = dict(d["audit"])
        audit["violations"] = tuple(audit["violations"])
        report = _assemble(
            cfg,
            d["split_summary"],
            d["stage_sizes"],
            records,
            [MetricRecord(**r) for r in d["validation_records"]],
            AuditResult(**audit),
            {},
            d["test_digest"],
        )
        if d.get("honest"):
            report.honest = cls.from_dict(d["honest"])
        return report


def _assemble(cfg, split_summary, stage_sizes, records, validation, audit, timings, test_digest) -> ExperimentReport:
    aggregates = {m: aggregate([r for r in records if r.model == m]) for m in cfg.models}
    report = ExperimentReport(
        cfg, cfg.digest(), split_summary, stage_sizes, records, validation, aggregates, None, audit, timings, test_digest
    )
    kappas = {m: report.kappas(m) for m in cfg.models}
    report.significance = pairwise_significance(kappas, cfg.alpha, cfg.correction, cfg.exact_max_n)
    return report


# --------------------------------------------------------------------------- #
# honest protocol
# --------------------------------------------------------------------------- #


@dataclass
class _FoldData:
    X: np.ndarray
    y: np.ndarray
    origins: set  # manifest indices of original images behind the rows
    checksums: set  # checksums of every image file used
    val_X: np.ndarray
    val_y: np.ndarray
    sizes: dict


class _Timer:
    def __init__(self):
        self.totals: dict[str, float] = {}

    def add(self, stage: str, started: float) -> None:
        self.totals[stage] = self.totals.get(stage, 0.0) + time.perf_counter() - started


def _test_digest(X: np.ndarray, ids: Sequence[int]) -> str:
    h = hashlib.sha256(np.asarray(ids, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(X, dtype="<f4").tobytes())
    return h.hexdigest()


class _HonestRun:
    """Holds the shared state of one honest experiment while folds run."""

    def __init__(self, cfg: ExperimentConfig, manifest: DatasetManifest, timer: _Timer):
        self.cfg = cfg
        self.manifest = manifest
        self.timer = timer
        self.n_classes = len(manifest.classes)
        self.labels = manifest.labels
        self.plan: SplitPlan = split_manifest(manifest, cfg.holdout_fraction, cfg.k, cfg.seed)
        self.test_ids = list(self.plan.test_indices)
        self.test_set = set(self.test_ids)
        self.test_checksums = {manifest.records[i].checksum for i in self.test_ids}
        self.spec = cfg.features.spec()
        self.cache = cfg.cache_dir()
        self.stage_sizes: dict[str, Any] = {
            "corpus": len(manifest),
            "test": len(self.test_ids),
            "train_pool": len(self.plan.train_indices),
        }

        t = time.perf_counter()
        self.features: FeatureMatrix = cached_extract(manifest, self.spec, self.cache)
        timer.add("extract", t)
        self.test_X = self.features.rows(self.test_ids)
        self.test_y = self.labels[self.test_ids]

        self.aug_manifest = None
        self.aug_features = None
        self.pool = None
        self.pool_folds = None
        if cfg.variant == "augmented":
            self._prepare_augmented()
        elif cfg.variant == "smoteenn" and cfg.smoteenn_mode == "whole-pool":
            self._prepare_whole_pool()

    def _prepare_augmented(self):
        t = time.perf_counter()
        self.aug_manifest = augment_training_set(
            self.manifest, self.plan.train_indices, self.cfg.augment, self.cfg.seed, self.cache
        )
        self.timer.add("augment", t)
        t = time.perf_counter()
        self.aug_features = cached_extract(self.aug_manifest, self.spec, self.cache)
        self.timer.add("extract", t)
        n_orig = len(self.plan.train_indices)
        # original manifest index each augmented-manifest row descends from
        self.aug_family = np.array(
            list(self.plan.train_indices) + [r.source for r in self.aug_manifest.records[n_orig:]], dtype=np.int64
        )
        self.stage_sizes["augmented_pool"] = len(self.aug_manifest)

    def _prepare_whole_pool(self):
        t = time.perf_counter()
        ids = list(self.plan.train_indices)
        data = LabeledFeatures.from_rows(self.features.rows(ids), self.labels[ids], ids)
        self.pool = smoteenn(data, replace(self.cfg.resample, seed=derive_seed(self.cfg.resample.seed, self.cfg.seed)),
                             self.n_classes)
        self.timer.add("resample", t)
        keys = [
            f"s{r:08d}" if self.pool.synthetic[r] else self.manifest.records[int(self.pool.row_ids[r])].checksum
            for r in range(len(self.pool))
        ]
        self.pool_folds = assign_folds(self.pool.y, keys, self.cfg.k, self.cfg.seed, self.n_classes)
        self.stage_sizes["resampled_pool"] = len(self.pool)
        self.stage_sizes["resample_stages"] = [[s, _str_keys(b), _str_keys(a)] for s, b, a in self.pool.stages]

    def fold_data(self, fold: int) -> _FoldData:
        cfg = self.cfg
        train_ids = [int(i) for i in self.plan.training_indices(fold)]
        val_ids = [int(i) for i in self.plan.validation_indices(fold)]
        sizes: dict[str, Any] = {"fold": fold, "originals": len(train_ids), "validation": len(val_ids)}
        val_X = self.features.rows(val_ids)
        val_y = self.labels[val_ids]

        if cfg.variant == "original":
            X = self.features.rows(train_ids)
            y = self.labels[train_ids]
            origins = set(train_ids)
            checksums = {self.manifest.records[i].checksum for i in train_ids}
        elif cfg.variant == "augmented":
            keep = np.flatnonzero(np.isin(self.aug_family, train_ids))
            X = self.aug_features.rows(keep)
            y = self.aug_manifest.labels[keep]
            origins = {int(self.aug_family[r]) for r in keep}
            checksums = {self.aug_manifest.records[r].checksum for r in keep}
        elif cfg.smoteenn_mode == "per-fold":
            t = time.perf_counter()
            data = LabeledFeatures.from_rows(self.features.rows(train_ids), self.labels[train_ids], train_ids)
            rcfg = replace(cfg.resample, seed=derive_seed(cfg.resample.seed, cfg.seed, fold))
            res = smoteenn(data, rcfg, self.n_classes)
            self.timer.add("resample", t)
            X, y = res.X, res.y
            origins = res.origins()
            checksums = {self.manifest.records[i].checksum for i in origins}
            sizes["resample_stages"] = [[s, _str_keys(b), _str_keys(a)] for s, b, a in res.stages]
        else:
            keep = self.pool_folds != fold
            res = self.pool.take(keep)
            X, y = res.X, res.y
            origins = res.origins()
            checksums = {self.manifest.records[i].checksum for i in origins}
            held = np.flatnonzero(~keep & ~self.pool.synthetic)
            val_X, val_y = self.pool.X[held], self.pool.y[held]
            sizes["validation"] = len(held)
        sizes["train_rows"] = len(y)
        return _FoldData(np.asarray(X, dtype=np.float64), np.asarray(y), origins, checksums, val_X, val_y, sizes)

    def audit_fold(self, data: _FoldData) -> list[str]:
        bad = []
        hit = sorted(data.origins & self.test_set)
        if hit:
            bad.append(f"training rows derive from test images {hit[:10]}")
        dup = data.checksums & self.test_checksums
        if dup:
            bad.append(f"{len(dup)} training files are byte-identical to test images")
        return bad

    def run_fold(self, fold: int):
        cfg = self.cfg
        data = self.fold_data(fold)
        violations = [f"fold {fold}: {v}" for v in self.audit_fold(data)]
        test_records, val_records = [], []
        for mi, kind in enumerate(cfg.models):
            mcfg = cfg.model_config(kind)
            mcfg = replace(mcfg, seed=derive_seed(mcfg.seed, cfg.seed, fold, mi))
            t = time.perf_counter()
            model = train_model(kind, data.X, data.y, mcfg, tuple(range(self.n_classes)))
            self.timer.add(f"train.{kind}", t)
            t = time.perf_counter()
            ctx = dict(fold=fold, model=kind, variant=cfg.variant)
            test_records.append(evaluate(self.test_y, predict(model, self.test_X), self.n_classes, **ctx))
            if len(data.val_y):
                val_records.append(
                    _evaluate_lenient(data.val_y, predict(model, data.val_X), self.n_classes, split="validation", **ctx)
                )
            self.timer.add("evaluate", t)
        return test_records, val_records, violations, data.sizes, len(data.y)


def _str_keys(d: Mapping) -> dict:
    return {str(k): v for k, v in d.items()}


def _evaluate_lenient(y_true, y_pred, n_classes, **ctx) -> MetricRecord:
    """Validation folds can be tiny; an undefined kappa there is recorded as NaN."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            return evaluate(y_true, y_pred, n_classes, **ctx)
        except MetricsError:
            nan = float("nan")
            return MetricRecord(nan, nan, nan, nan, nan, **ctx)


def _resolve_manifest(cfg: ExperimentConfig, manifest: DatasetManifest | None) -> DatasetManifest:
    if manifest is not None:
        return manifest
    if not cfg.manifest:
        raise ConfigurationError("no manifest given")
    return load_manifest(cfg.manifest)


def run_experiment(cfg: ExperimentConfig, manifest: DatasetManifest | None = None) -> ExperimentReport:
    """Honest protocol; raises LeakageError rather than report a contaminated run."""
    if cfg.protocol == "leaky":
        return run_leaky(cfg, manifest)
    manifest = _resolve_manifest(cfg, manifest)
    timer = _Timer()
    started = time.perf_counter()
    run = _HonestRun(cfg, manifest, timer)
    workers = _env.worker_count()
    folds = range(cfg.k)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run.run_fold, folds))
    else:
        results = [run.run_fold(f) for f in folds]

    records = [r for res in results for r in res[0]]
    validation = [r for res in results for r in res[1]]
    violations = tuple(v for res in results for v in res[2])
    run.stage_sizes["folds"] = [res[3] for res in results]
    checked = sum(res[4] for res in results)
    audit = AuditResult(not violations, "honest", checked, len(run.test_ids), violations)
    if violations:
        raise LeakageError(audit.summary())
    timer.totals["total"] = time.perf_counter() - started
    split_summary = {
        "test": len(run.test_ids),
        "train_pool": len(run.plan.train_indices),
        "k": cfg.k,
        "fold_sizes": [int(np.sum(np.asarray(run.plan.fold_ids) == f)) for f in range(cfg.k)],
        "test_per_class": _str_keys(_per_class(run.test_y, manifest)),
        "train_per_class": _str_keys(_per_class(manifest.labels[list(run.plan.train_indices)], manifest)),
    }
    return _assemble(
        cfg, split_summary, run.stage_sizes, records, validation, audit, dict(timer.totals),
        _test_digest(run.test_X, run.test_ids),
    )


def _per_class(labels: np.ndarray, manifest: DatasetManifest) -> dict:
    counts = np.bincount(labels, minlength=len(manifest.classes))
    return {c.name: int(counts[c.id]) for c in manifest.classes}


# --------------------------------------------------------------------------- #
# leaky protocol
# --------------------------------------------------------------------------- #


def leaky_split_sizes(total: int) -> tuple[int, int, int]:
    """Train/validation/test sizes proportional to the criticised split."""
    s = sum(LEAKY_RATIOS)
    return tuple(largest_remainder([total * r / s for r in LEAKY_RATIOS], total))


def run_leaky(cfg: ExperimentConfig, manifest: DatasetManifest | None = None, pair: bool = True) -> ExperimentReport:
    """Augment every image first, then split the enlarged set at random.

    Repeated ``cfg.k`` times with independent splits; the augmented copies
    of an image can land on both sides of the split, which is the point.
    With ``pair`` the matching honest run is attached for the delta.
    """
    if cfg.variant != "augmented":
        raise UsageError(f"the leaky protocol needs variant 'augmented', got {cfg.variant!r}")
    cfg = replace(cfg, protocol="leaky")
    manifest = _resolve_manifest(cfg, manifest)
    timer = _Timer()
    started = time.perf_counter()
    n_classes = len(manifest.classes)
    spec = cfg.features.spec()
    cache = cfg.cache_dir()

    t = time.perf_counter()
    aug = augment_training_set(manifest, range(len(manifest)), cfg.augment, cfg.seed, cache)
    timer.add("augment", t)
    t = time.perf_counter()
    feats = cached_extract(aug, spec, cache)
    timer.add("extract", t)
    n = len(aug)
    family = np.array(list(range(len(manifest))) + [r.source for r in aug.records[len(manifest):]], dtype=np.int64)
    X_all = np.asarray(feats.data, dtype=np.float64)
    y_all = aug.labels
    n_train, n_val, n_test = leaky_split_sizes(n)

    records, validation, contamination = [], [], []
    for rep in range(cfg.k):
        perm = np.random.default_rng([cfg.seed, 0x1EA4, rep]).permutation(n)
        tr, va, te = perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]
        contamination.append(float(np.isin(family[te], family[tr]).mean()))
        for mi, kind in enumerate(cfg.models):
            mcfg = cfg.model_config(kind)
            mcfg = replace(mcfg, seed=derive_seed(mcfg.seed, cfg.seed, rep, mi))
            t = time.perf_counter()
            model = train_model(kind, X_all[tr], y_all[tr], mcfg, tuple(range(n_classes)))
            timer.add(f"train.{kind}", t)
            ctx = dict(fold=rep, model=kind, variant=cfg.variant)
            records.append(evaluate(y_all[te], predict(model, X_all[te]), n_classes, **ctx))
            if len(va):
                validation.append(
                    _evaluate_lenient(y_all[va], predict(model, X_all[va]), n_classes, split="validation", **ctx)
                )
    timer.totals["total"] = time.perf_counter() - started
    audit = AuditResult(
        passed=False,
        mode="leaky",
        checked_rows=n_train * cfg.k,
        test_size=n_test,
        violations=("augmentation applied before the split; test rows have relatives in training",),
        contamination=float(np.mean(contamination)),
    )
    split_summary = {"train": n_train, "validation": n_val, "test": n_test, "repetitions": cfg.k,
                     "ratios": list(LEAKY_RATIOS)}
    stage_sizes = {"corpus": len(manifest), "augmented_corpus": n,
                   "contamination_per_repetition": contamination}
    report = _assemble(cfg, split_summary, stage_sizes, records, validation, audit, dict(timer.totals), "")
    if pair:
        report.honest = run_experiment(replace(cfg, protocol="honest"), manifest)
    return report


# --------------------------------------------------------------------------- #
# cross-variant comparison
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class VariantComparison:
    model: str
    first: str
    second: str
    result: TestResult
    mean_difference: float  # mean kappa of ``first`` minus ``second``

    @property
    def direction(self) -> str:
        if self.mean_difference > 0:
            return ">"
        if self.mean_difference < 0:
            return "<"
        return "="


def _report_label(report: ExperimentReport) -> str:
    return f"{report.variant}{'-leaky' if report.leaky else ''}"


def compare_variants(reports: Sequence[ExperimentReport], alpha: float = 0.05,
                     exact_max_n: int = EXACT_MAX_N) -> list[VariantComparison]:
    """Mann-Whitney on kappa vectors for every model and every pair of reports."""
    if len(reports) < 2:
        raise InputError("need at least two reports to compare")
    models = reports[0].models
    k = len(reports[0].kappas(models[0]))
    for r in reports[1:]:
        if set(r.models) != set(models):
            raise InputError(f"reports use different model sets: {models} vs {r.models}")
        if len(r.kappas(models[0])) != k:
            raise InputError("reports have different fold counts")
    labels = [_report_label(r) for r in reports]
    if len(set(labels)) != len(labels):
        labels = [f"{lab}#{i}" for i, lab in enumerate(labels)]
    out = []
    for model in models:
        for i in range(len(reports)):
            for j in range(i + 1, len(reports)):
                a, b = reports[i].kappas(model), reports[j].kappas(model)
                res = mann_whitney_u(a, b, alpha, exact_max_n)
                out.append(VariantComparison(model, labels[i], labels[j], res, float(np.mean(a) - np.mean(b))))
    return out


def format_aggregate_table(report: ExperimentReport, spread: str = "sd") -> str:
    """Rows of model x metric formatted as percentages with ``± spread``."""
    heads = ["model", "accuracy", "precision", "recall", "f1", "kappa"]
    rows = [heads]
    for m in report.models:
        agg: dict[str, Aggregate] = report.aggregates[m]
        rows.append([m] + [agg[name].format(spread) if name in agg else "n/a" for name in METRIC_NAMES])
    widths = [max(len(r[c]) for r in rows) for c in range(len(heads))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows)


def mean_kappa(report: ExperimentReport, model: str) -> float:
    vals = report.kappas(model)
    return float(np.mean(vals)) if vals else math.nan
