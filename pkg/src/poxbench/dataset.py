"""Image corpus manifests and the stratified hold-out / k-fold split plan.

A manifest is the ordered list of labelled images an experiment works on.
Record order is the index space used everywhere else (feature rows, split
plans, provenance links), so it must be stable.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import ConfigurationError, StratificationError

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.tsv"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")

# Named RNG streams so hold-out and fold shuffles never share draws.
_HOLDOUT_STREAM = 0
_KFOLD_STREAM = 1


@dataclass(frozen=True, order=True)
class ClassLabel:
    id: int
    name: str


@dataclass(frozen=True)
class ImageRecord:
    """One image on disk.

    ``source`` and ``copy`` are set only for derived (augmented) images and
    point back at the manifest index of the original they were made from.
    """

    path: Path
    label: ClassLabel
    width: int
    height: int
    checksum: str
    source: int | None = None
    copy: int | None = None

    @property
    def derived(self) -> bool:
        return self.source is not None


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ImageRecord, ...] = ()
    classes: tuple[ClassLabel, ...] = ()
    skipped: int = 0

    def __post_init__(self):
        ids = [c.id for c in self.classes]
        if ids != list(range(len(ids))):
            raise ConfigurationError(f"class ids must be contiguous from 0, got {ids}")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate class names: {names}")
        known = set(self.classes)
        for r in self.records:
            if r.label not in known:
                raise ConfigurationError(f"record {r.path} has unknown label {r.label}")

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> ImageRecord:
        return self.records[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label.id for r in self.records], dtype=np.int64)

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]

    def class_counts(self) -> dict[str, int]:
        counts = np.bincount(self.labels, minlength=len(self.classes))
        return {c.name: int(counts[c.id]) for c in self.classes}

    def label_by_name(self, name: str) -> ClassLabel:
        for c in self.classes:
            if c.name == name:
                return c
        raise ConfigurationError(f"unknown class {name!r}")

    def subset(self, indices: Iterable[int]) -> "DatasetManifest":
        return DatasetManifest(tuple(self.records[i] for i in indices), self.classes)

    def extend(self, records: Iterable[ImageRecord]) -> "DatasetManifest":
        return DatasetManifest(self.records + tuple(records), self.classes, self.skipped)


def file_checksum(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_rgb(path: Path | str) -> np.ndarray:
    """Decode an image file into an H x W x 3 uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def _probe(path: Path, label: ClassLabel) -> ImageRecord | None:
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            width, height = im.size
    except (OSError, ValueError) as exc:
        warnings.warn(f"skipping undecodable image {path}: {exc}", stacklevel=3)
        return None
    return ImageRecord(path, label, width, height, file_checksum(path))


def _parse_manifest_file(path: Path) -> tuple[list[tuple[Path, str]], list[str] | None]:
    rows: list[tuple[Path, str]] = []
    declared: list[str] | None = None
    base = path.parent
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("classes:"):
                    declared = [s.strip() for s in body[len("classes:"):].split(",") if s.strip()]
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ConfigurationError(f"{path}:{lineno}: expected 'path<TAB>class', got {line!r}")
            rel, name = parts[0].strip(), parts[1].strip()
            rows.append((base / rel, name))
    return rows, declared


def load_manifest(root: Path | str) -> DatasetManifest:
    """Load a corpus from a manifest file or a directory.

    ``root`` may be a ``path<TAB>class`` manifest file, a directory holding
    ``manifest.tsv``, or a directory with one subdirectory of images per
    class. Class ids follow sorted class names unless the manifest carries
    a ``# classes: a, b, c`` line. Images that fail to decode are skipped
    with a warning; the number skipped is kept on the manifest.
    """
    root = Path(root)
    if not root.exists():
        raise ConfigurationError(f"corpus root {root} does not exist")
    declared = None
    try:
        if root.is_file():
            rows, declared = _parse_manifest_file(root)
        elif (root / MANIFEST_NAME).is_file():
            rows, declared = _parse_manifest_file(root / MANIFEST_NAME)
        else:
            rows = []
            for sub in sorted(p for p in root.iterdir() if p.is_dir()):
                for img in sorted(sub.iterdir()):
                    if img.suffix.lower() in IMAGE_SUFFIXES:
                        rows.append((img, sub.name))
            if not rows:
                # class folders with no images still define the taxonomy
                declared = sorted(p.name for p in root.iterdir() if p.is_dir() and any(p.iterdir()))
    except OSError as exc:
        raise ConfigurationError(f"cannot read corpus root {root}: {exc}") from exc

    names = declared if declared is not None else sorted({name for _, name in rows})
    missing = {name for _, name in rows} - set(names)
    if missing:
        raise ConfigurationError(f"records use classes not declared in the manifest: {sorted(missing)}")
    classes = tuple(ClassLabel(i, n) for i, n in enumerate(names))
    by_name = {c.name: c for c in classes}

    records = []
    skipped = 0
    for path, name in rows:
        rec = _probe(path, by_name[name])
        if rec is None:
            skipped += 1
        else:
            records.append(rec)
    manifest = DatasetManifest(tuple(records), classes, skipped)
    log.info("loaded %d images from %s (%d skipped): %s", len(records), root, skipped, manifest.class_counts())
    return manifest


def write_manifest(manifest: DatasetManifest, path: Path | str) -> Path:
    """Write the canonical ``path<TAB>class`` manifest, paths relative to its folder."""
    path = Path(path)
    base = path.parent.resolve()
    lines = ["# classes: " + ", ".join(manifest.class_names)]
    for r in manifest.records:
        p = Path(r.path).resolve()
        try:
            rel = p.relative_to(base)
        except ValueError:
            rel = p
        lines.append(f"{rel.as_posix()}\t{r.label.name}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# --------------------------------------------------------------------------- #
# splitting
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class SplitPlan:
    """Fixed hold-out plus stratified fold assignment of the remaining rows.

    ``fold_ids`` is aligned with ``train_indices``; it is empty until
    :func:`stratified_kfold` fills it in.
    """

    test_indices: tuple[int, ...]
    train_indices: tuple[int, ...]
    seed: int
    fraction: float
    k: int | None = None
    fold_ids: tuple[int, ...] = field(default=())

    @property
    def fold_of(self) -> dict[int, int]:
        return dict(zip(self.train_indices, self.fold_ids))

    def validation_indices(self, fold: int) -> np.ndarray:
        self._require_folds()
        tr = np.asarray(self.train_indices, dtype=np.int64)
        return tr[np.asarray(self.fold_ids) == fold]

    def training_indices(self, fold: int) -> np.ndarray:
        self._require_folds()
        tr = np.asarray(self.train_indices, dtype=np.int64)
        return tr[np.asarray(self.fold_ids) != fold]

    def _require_folds(self):
        if self.k is None:
            raise ConfigurationError("split plan has no folds; run stratified_kfold first")

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "fraction": self.fraction,
                "k": self.k,
                "test_indices": list(self.test_indices),
                "train_indices": list(self.train_indices),
                "fold_ids": list(self.fold_ids),
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "SplitPlan":
        d = json.loads(text)
        return cls(
            tuple(d["test_indices"]),
            tuple(d["train_indices"]),
            d["seed"],
            d["fraction"],
            d["k"],
            tuple(d["fold_ids"]),
        )


def largest_remainder(quotas: Sequence[float], total: int) -> list[int]:
    """Round ``quotas`` to integers summing to ``total``.

    Every quota is floored and the shortfall goes to the largest fractional
    parts, ties to the lower position.
    """
    floors = [math.floor(q) for q in quotas]
    short = total - sum(floors)
    if short < 0 or short > len(quotas):
        raise ValueError(f"cannot apportion {total} over quotas {list(quotas)}")
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - floors[i]), i))
    for i in order[:short]:
        floors[i] += 1
    return floors


def _class_members(manifest: DatasetManifest, pool: Iterable[int], class_id: int, seed: int, stream: int) -> list[int]:
    """Members of one class in a seed-determined order.

    Sorting by checksum first makes the order independent of how the
    filesystem happened to enumerate files.
    """
    members = [i for i in pool if manifest.records[i].label.id == class_id]
    members.sort(key=lambda i: (manifest.records[i].checksum, i))
    rng = np.random.default_rng([seed, stream, class_id])
    return [members[j] for j in rng.permutation(len(members))]


def stratified_holdout(manifest: DatasetManifest, fraction: float, seed: int) -> SplitPlan:
    """Carve a class-stratified hold-out test set off the manifest."""
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError(f"hold-out fraction must be in (0, 1), got {fraction}")
    n = len(manifest)
    counts = np.bincount(manifest.labels, minlength=len(manifest.classes)) if n else np.zeros(0, int)
    for c in manifest.classes:
        if counts[c.id] == 0:
            raise StratificationError(f"class {c.name!r} has no samples")
    total = math.floor(fraction * n + 0.5)
    per_class = largest_remainder([fraction * int(k) for k in counts], total)
    test: list[int] = []
    for c in manifest.classes:
        if per_class[c.id] == 0:
            raise StratificationError(
                f"hold-out fraction {fraction} leaves class {c.name!r} ({counts[c.id]} samples) with no test images"
            )
        ordered = _class_members(manifest, range(n), c.id, seed, _HOLDOUT_STREAM)
        test.extend(ordered[: per_class[c.id]])
    test_set = set(test)
    return SplitPlan(
        test_indices=tuple(sorted(test)),
        train_indices=tuple(i for i in range(n) if i not in test_set),
        seed=seed,
        fraction=fraction,
    )


def assign_folds(labels: np.ndarray, order_key: Sequence, k: int, seed: int, n_classes: int | None = None) -> np.ndarray:
    """Stratified fold ids for rows with the given labels.

    Each class is shuffled (after ordering by ``order_key``) and dealt out
    round-robin; the dealing position carries over from one class to the
    next so the folds also end up within one row of each other in size.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if k < 2:
        raise ConfigurationError(f"k must be >= 2, got {k}")
    if k > n:
        raise ConfigurationError(f"k={k} exceeds the {n} training rows")
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    folds = np.empty(n, dtype=np.int64)
    pos = 0
    for c in range(n_classes):
        members = [i for i in range(n) if labels[i] == c]
        if not members:
            continue
        if len(members) < k:
            warnings.warn(f"class {c} has {len(members)} training samples, fewer than k={k} folds", stacklevel=2)
        members.sort(key=lambda i: (order_key[i], i))
        rng = np.random.default_rng([seed, _KFOLD_STREAM, c])
        for j in rng.permutation(len(members)):
            folds[members[j]] = pos % k
            pos += 1
    return folds


def stratified_kfold(plan: SplitPlan, manifest: DatasetManifest, k: int, seed: int) -> SplitPlan:
    """Fill in stratified fold assignments for the plan's training rows."""
    train = list(plan.train_indices)
    if k < 2:
        raise ConfigurationError(f"k must be >= 2, got {k}")
    if k > len(train):
        raise ConfigurationError(f"k={k} exceeds the {len(train)} training images")
    labels = manifest.labels[train]
    keys = [manifest.records[i].checksum for i in train]
    folds = assign_folds(labels, keys, k, seed, n_classes=len(manifest.classes))
    return SplitPlan(
        test_indices=plan.test_indices,
        train_indices=plan.train_indices,
        seed=plan.seed,
        fraction=plan.fraction,
        k=k,
        fold_ids=tuple(int(f) for f in folds),
    )


def split_manifest(manifest: DatasetManifest, fraction: float, k: int, seed: int) -> SplitPlan:
    return stratified_kfold(stratified_holdout(manifest, fraction, seed), manifest, k, seed)
