"""Deep feature extraction, a deterministic stub extractor, and the feature cache.

The backbone is never trained here. It is consumed as an ONNX model whose
classification head (and global pooling) has already been cut off, so the
last convolutional map (2048 x 7 x 7 for ResNet-50 at 224 x 224) is
flattened into a 100,352-long row per image.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from . import _env
from .dataset import DatasetManifest, file_checksum, read_rgb
from .errors import ContractError, ExtractionError, InputError, StaleCacheError

IMAGENET_MEANS = (0.485, 0.456, 0.406)
IMAGENET_STDS = (0.229, 0.224, 0.225)
RESNET50_DIM = 7 * 7 * 2048

_RESAMPLE = {"bilinear": Image.BILINEAR, "bicubic": Image.BICUBIC, "nearest": Image.NEAREST}


@dataclass(frozen=True)
class BackboneSpec:
    model_path: Path
    input_size: tuple[int, int, int] = (224, 224, 3)
    channel_means: tuple[float, float, float] = IMAGENET_MEANS
    channel_stds: tuple[float, float, float] = IMAGENET_STDS
    output_dim: int = RESNET50_DIM
    resize: str = "bilinear"
    batch_size: int = field(default=16, compare=False)

    def __post_init__(self):
        if self.output_dim < 1:
            raise ContractError("output_dim must be positive")
        if self.resize not in _RESAMPLE:
            raise ContractError(f"unknown resize filter {self.resize!r}")

    @property
    def input_dim(self) -> int:
        h, w, c = self.input_size
        return h * w * c

    def digest(self) -> str:
        payload = {
            "kind": "backbone",
            "model_sha256": file_checksum(Path(self.model_path)),
            "input_size": list(self.input_size),
            "channel_means": list(self.channel_means),
            "channel_stds": list(self.channel_stds),
            "output_dim": self.output_dim,
            "resize": self.resize,
        }
        return _digest(payload)


@dataclass(frozen=True)
class StubSpec:
    """Cheap pixel-derived extractor used in place of a real backbone.

    Images are box-filtered down to ``grid x grid``, mirrored-averaged
    left/right (so horizontal flips map to the same row), centred, and sent
    through a seeded Gaussian projection to ``d`` outputs. A tiny keyed-hash
    jitter on the file checksum is added so byte-identical files, and only
    those, are guaranteed identical rows.
    """

    d: int
    seed: int = 0
    grid: int = 8
    scale: float = 5.0
    jitter: float = 1e-3

    def __post_init__(self):
        if self.d < 1:
            raise ContractError(f"stub dimension must be >= 1, got {self.d}")

    @property
    def output_dim(self) -> int:
        return self.d

    def digest(self) -> str:
        return _digest({"kind": "stub", **asdict(self)})

    def projection(self) -> np.ndarray:
        k = self.grid * self.grid * 3
        rng = np.random.default_rng([self.seed, 0x5717B])
        return rng.standard_normal((k, self.d)) * (self.scale / np.sqrt(k))


def _digest(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Rows of deep features keyed by manifest index."""

    data: np.ndarray
    row_ids: np.ndarray
    source: str
    spec_digest: str

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        row_ids = np.ascontiguousarray(self.row_ids, dtype=np.int64)
        if data.ndim != 2:
            raise InputError(f"feature data must be 2-D, got shape {data.shape}")
        if len(row_ids) != data.shape[0]:
            raise InputError("row_ids must align with data rows")
        if not np.isfinite(data).all():
            raise InputError("feature matrix contains NaN or Inf")
        if len(np.unique(row_ids)) != len(row_ids):
            raise InputError("row_ids must be unique")
        data.flags.writeable = False
        row_ids.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "row_ids", row_ids)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def rows(self, ids: Sequence[int]) -> np.ndarray:
        """Feature rows for the given manifest indices, in that order."""
        pos = {int(r): i for i, r in enumerate(self.row_ids)}
        try:
            return self.data[[pos[int(i)] for i in ids]]
        except KeyError as exc:
            raise InputError(f"row id {exc.args[0]} not present in feature matrix") from None

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return (
            self.spec_digest == other.spec_digest
            and np.array_equal(self.row_ids, other.row_ids)
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


# --------------------------------------------------------------------------- #
# backbone
# --------------------------------------------------------------------------- #


def preprocess(pixels: np.ndarray, spec: BackboneSpec) -> np.ndarray:
    """Resize, scale to [0, 1], normalise per channel; returns C x H x W float32."""
    h, w, _ = spec.input_size
    im = Image.fromarray(pixels, mode="RGB")
    if im.size != (w, h):
        im = im.resize((w, h), _RESAMPLE[spec.resize])
    x = np.asarray(im, dtype=np.float32) / 255.0
    x = (x - np.asarray(spec.channel_means, np.float32)) / np.asarray(spec.channel_stds, np.float32)
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def _open_session(spec: BackboneSpec):
    try:
        import onnxruntime as ort
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise ExtractionError("onnxruntime is required for backbone extraction (pip install 'artifact[onnx]')") from exc
    opts = ort.SessionOptions()
    opts.intra_op_num_threads = _env.worker_count()
    try:
        return ort.InferenceSession(str(spec.model_path), sess_options=opts, providers=["CPUExecutionProvider"])
    except Exception as exc:
        raise ExtractionError(f"cannot load backbone model {spec.model_path}: {exc}") from exc


def _declared_dim(session) -> int | None:
    shape = session.get_outputs()[0].shape
    dims = shape[1:]
    if all(isinstance(s, int) for s in dims):
        return int(np.prod(dims)) if dims else 1
    return None


def extract_features(manifest: DatasetManifest, spec: BackboneSpec, row_ids: Sequence[int] | None = None) -> FeatureMatrix:
    """Run every image through the backbone and flatten its output."""
    row_ids = list(range(len(manifest))) if row_ids is None else list(row_ids)
    digest = spec.digest()
    if not row_ids:
        return FeatureMatrix(np.zeros((0, spec.output_dim), np.float32), np.zeros(0, np.int64), "backbone", digest)
    session = _open_session(spec)
    declared = _declared_dim(session)
    if declared is not None and declared != spec.output_dim:
        raise ContractError(f"backbone declares {declared} outputs per image, spec expects {spec.output_dim}")
    input_name = session.get_inputs()[0].name
    out = np.empty((len(row_ids), spec.output_dim), dtype=np.float32)
    for start in range(0, len(row_ids), spec.batch_size):
        chunk = row_ids[start : start + spec.batch_size]
        batch = np.stack([preprocess(read_rgb(manifest.records[i].path), spec) for i in chunk])
        try:
            result = session.run(None, {input_name: batch})[0]
        except Exception as exc:
            raise ExtractionError(f"backbone inference failed: {exc}") from exc
        flat = np.asarray(result, dtype=np.float32).reshape(len(chunk), -1)
        if flat.shape[1] != spec.output_dim:
            raise ContractError(f"backbone produced {flat.shape[1]} outputs per image, spec expects {spec.output_dim}")
        out[start : start + len(chunk)] = flat
    return FeatureMatrix(out, np.asarray(row_ids), "backbone", digest)


# --------------------------------------------------------------------------- #
# stub
# --------------------------------------------------------------------------- #


def _stub_row(pixels: np.ndarray, checksum: str, spec: StubSpec, proj: np.ndarray) -> np.ndarray:
    small = Image.fromarray(pixels, mode="RGB").resize((spec.grid, spec.grid), Image.BOX)
    v = np.asarray(small, dtype=np.float64) / 255.0
    v = 0.5 * (v + v[:, ::-1, :]) - 0.5
    row = v.reshape(-1) @ proj
    key = hashlib.blake2b(bytes.fromhex(checksum), digest_size=8, key=spec.seed.to_bytes(8, "little", signed=True))
    jitter_rng = np.random.default_rng(int.from_bytes(key.digest(), "little"))
    return row + spec.jitter * jitter_rng.standard_normal(spec.d)


def stub_extract(manifest: DatasetManifest, d: int | StubSpec, seed: int = 0, row_ids: Sequence[int] | None = None) -> FeatureMatrix:
    spec = d if isinstance(d, StubSpec) else StubSpec(d=d, seed=seed)
    row_ids = list(range(len(manifest))) if row_ids is None else list(row_ids)
    proj = spec.projection()

    def one(i: int) -> np.ndarray:
        rec = manifest.records[i]
        return _stub_row(read_rgb(rec.path), rec.checksum, spec, proj)

    workers = _env.worker_count()
    if workers > 1 and len(row_ids) > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, row_ids))
    else:
        rows = [one(i) for i in row_ids]
    data = np.stack(rows) if rows else np.zeros((0, spec.d))
    return FeatureMatrix(data.astype(np.float32), np.asarray(row_ids, dtype=np.int64), "stub", spec.digest())


def extract(manifest: DatasetManifest, spec: BackboneSpec | StubSpec, row_ids: Sequence[int] | None = None) -> FeatureMatrix:
    if isinstance(spec, StubSpec):
        return stub_extract(manifest, spec, row_ids=row_ids)
    return extract_features(manifest, spec, row_ids)


# --------------------------------------------------------------------------- #
# cache
# --------------------------------------------------------------------------- #

CACHE_MAGIC = b"PXFM"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sHBBQQ32s")
_SOURCES = {"backbone": 0, "stub": 1, "cache": 2, "resampled": 3}


def cache_store(matrix: FeatureMatrix, path: Path | str) -> Path:
    """Write ``matrix`` atomically in the little-endian single-file format.

    Layout: header (magic, version, source code, reserved, n, d, raw
    sha256 spec digest), then n int64 row ids, then n*d float32 values.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _HEADER.pack(
        CACHE_MAGIC,
        CACHE_VERSION,
        _SOURCES.get(matrix.source, 2),
        0,
        matrix.n,
        matrix.d,
        bytes.fromhex(matrix.spec_digest),
    )
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(matrix.row_ids.astype("<i8").tobytes())
            fh.write(matrix.data.astype("<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def cache_load(path: Path | str, expected_digest: str | None = None) -> FeatureMatrix:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ExtractionError(f"cannot read feature cache {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise StaleCacheError(f"{path} is truncated")
    magic, version, _src, _res, n, d, digest = _HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC or version != CACHE_VERSION:
        raise StaleCacheError(f"{path} is not a version-{CACHE_VERSION} feature cache")
    digest_hex = digest.hex()
    if expected_digest is not None and digest_hex != expected_digest:
        raise StaleCacheError(f"{path} was produced by spec {digest_hex[:12]}, expected {expected_digest[:12]}")
    off = _HEADER.size
    expected_len = off + 8 * n + 4 * n * d
    if len(raw) != expected_len:
        raise StaleCacheError(f"{path} has {len(raw)} bytes, header implies {expected_len}")
    row_ids = np.frombuffer(raw, dtype="<i8", count=n, offset=off).astype(np.int64)
    data = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off + 8 * n).reshape(n, d).astype(np.float32)
    return FeatureMatrix(data, row_ids, "cache", digest_hex)


def manifest_digest(manifest: DatasetManifest, row_ids: Sequence[int] | None = None) -> str:
    ids = range(len(manifest)) if row_ids is None else row_ids
    h = hashlib.sha256()
    for i in ids:
        h.update(f"{i}:{manifest.records[i].checksum}\n".encode())
    return h.hexdigest()


def cached_extract(
    manifest: DatasetManifest,
    spec: BackboneSpec | StubSpec,
    cache_dir: Path | str | None,
    row_ids: Sequence[int] | None = None,
) -> FeatureMatrix:
    """:func:`extract`, memoised on disk by (spec digest, image checksums)."""
    if cache_dir is None:
        return extract(manifest, spec, row_ids)
    digest = spec.digest()
    path = Path(cache_dir) / "features" / f"{digest[:16]}_{manifest_digest(manifest, row_ids)[:16]}.pxf"
    if path.exists():
        try:
            return cache_load(path, digest)
        except StaleCacheError:
            pass
    fm = extract(manifest, spec, row_ids)
    cache_store(fm, path)
    return fm
