"""The three classical heads trained on deep features.

All three share ``predict``; ``save_model``/``load_model`` use a small
versioned binary format (magic, JSON header echoing the config, then named
little-endian parameter blocks) that is byte-stable for identical models.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from ..errors import InputError
from .logreg import LinearModel, LogRegConfig, train_logreg
from .mlp import MlpConfig, MlpModel, train_mlp
from .svm import BinarySvm, SvmConfig, SvmModel, train_svm

__all__ = [
    "LinearModel", "LogRegConfig", "train_logreg",
    "MlpConfig", "MlpModel", "train_mlp",
    "SvmConfig", "SvmModel", "train_svm",
    "MODEL_KINDS", "train_model", "predict", "save_model", "load_model", "describe",
]

MODEL_KINDS = ("logreg", "mlp", "svm")
_TRAINERS = {"logreg": train_logreg, "mlp": train_mlp, "svm": train_svm}
_CONFIGS = {"logreg": LogRegConfig, "mlp": MlpConfig, "svm": SvmConfig}


def default_config(kind: str, **overrides):
    return _CONFIGS[kind](**overrides)


def train_model(kind: str, X, y, cfg=None, classes=None):
    if kind not in _TRAINERS:
        raise InputError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    cfg = _CONFIGS[kind]() if cfg is None else cfg
    return _TRAINERS[kind](X, y, cfg, classes)


def predict(model, X) -> np.ndarray:
    """Class id with the highest score per row; exact ties go to the lowest id."""
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise InputError(f"model expects {model.n_features} features, got array of shape {X.shape}")
    if X.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmax(model.decision_function(X), axis=1).astype(np.int64)


# --------------------------------------------------------------------------- #
# serialisation
# --------------------------------------------------------------------------- #

MODEL_MAGIC = b"PXMD"
MODEL_VERSION = 1


def _classes_json(classes):
    return [asdict(c) if hasattr(c, "__dataclass_fields__") else c for c in classes]


def _classes_from_json(items):
    from ..dataset import ClassLabel

    return tuple(ClassLabel(**c) if isinstance(c, dict) else c for c in items)


def _config_json(cfg):
    if cfg is None:
        return None
    d = asdict(cfg)
    if "target" in d and d["target"] is not None:
        d["target"] = dict(d["target"])
    return d


def _config_from_json(kind, d):
    if d is None:
        return None
    if "hidden" in d:
        d = dict(d, hidden=tuple(d["hidden"]))
    return _CONFIGS[kind](**d)


def _model_blocks(model) -> tuple[dict, dict]:
    meta = {
        "kind": model.kind,
        "classes": _classes_json(model.classes),
        "config": _config_json(model.config),
    }
    if model.kind == "logreg":
        meta.update(n_iter=model.n_iter, objective_history=list(model.objective_history))
        return meta, {"W": model.W, "b": model.b}
    if model.kind == "mlp":
        meta.update(n_iter=model.n_iter, loss_curve=list(model.loss_curve))
        return meta, model.params()
    meta.update(
        kernel=model.kernel, gamma=model.gamma, coef0=model.coef0, degree=model.degree, C=model.C,
        n_features=model.n_features,
        machines=[
            {"positive": m.positive, "negative": m.negative, "rho": m.rho, "n_iter": m.n_iter, "converged": m.converged}
            for m in model.machines
        ],
    )
    blocks = {"support_vectors": model.support_vectors}
    for k, m in enumerate(model.machines):
        blocks[f"m{k}.support"] = m.support
        blocks[f"m{k}.alpha"] = m.alpha
        blocks[f"m{k}.y"] = m.y
    return meta, blocks


def model_bytes(model) -> bytes:
    meta, blocks = _model_blocks(model)
    header = json.dumps(meta, sort_keys=True).encode()
    parts = [MODEL_MAGIC, struct.pack("<HI", MODEL_VERSION, len(header)), header, struct.pack("<I", len(blocks))]
    for name, arr in blocks.items():
        arr = np.asarray(arr)
        dtype = "<i8" if arr.dtype.kind in "iu" else "<f8"
        arr = np.ascontiguousarray(arr.astype(dtype))
        raw_name = name.encode()
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<2sB", dtype[1:].encode(), arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_model(model, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(model_bytes(model))
    os.replace(tmp, path)
    return path


def load_model(path: Path | str):
    raw = Path(path).read_bytes()
    if raw[:4] != MODEL_MAGIC:
        raise InputError(f"{path} is not a model file")
    version, hlen = struct.unpack_from("<HI", raw, 4)
    if version != MODEL_VERSION:
        raise InputError(f"{path}: unsupported model format version {version}")
    off = 10
    meta = json.loads(raw[off : off + hlen])
    off += hlen
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    blocks = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + nlen].decode()
        off += nlen
        code, ndim = struct.unpack_from("<2sB", raw, off)
        off += 3
        shape = struct.unpack_from(f"<{ndim}Q", raw, off)
        off += 8 * ndim
        dtype = np.dtype("<" + code.decode())
        size = int(np.prod(shape)) * dtype.itemsize
        blocks[name] = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=off).reshape(shape).copy()
        off += size
    kind = meta["kind"]
    classes = _classes_from_json(meta["classes"])
    cfg = _config_from_json(kind, meta["config"])
    if kind == "logreg":
        return LinearModel(blocks["W"], blocks["b"], classes, meta["n_iter"], tuple(meta["objective_history"]), cfg)
    if kind == "mlp":
        return MlpModel(blocks["W1"], blocks["b1"], blocks["W2"], blocks["b2"], classes, meta["n_iter"],
                        tuple(meta["loss_curve"]), cfg)
    machines = tuple(
        BinarySvm(m["positive"], m["negative"], blocks[f"m{k}.support"], blocks[f"m{k}.alpha"], blocks[f"m{k}.y"],
                  m["rho"], m["n_iter"], m["converged"])
        for k, m in enumerate(meta["machines"])
    )
    return SvmModel(blocks["support_vectors"], machines, classes, meta["kernel"], meta["gamma"], meta["coef0"],
                    meta["degree"], meta["C"], meta["n_features"], cfg)


def describe(model) -> str:
    """Human-readable shapes and sparsity of a trained model."""
    lines = [f"kind: {model.kind}", f"classes: {len(model.classes)}", f"features: {model.n_features}"]
    if model.config is not None:
        for f in fields(model.config):
            lines.append(f"config.{f.name}: {getattr(model.config, f.name)}")
    if model.kind == "svm":
        lines.append(f"support vectors: {model.support_vectors.shape[0]}")
        for m in model.machines:
            at_bound = int(np.sum(m.alpha >= model.C))
            lines.append(
                f"pair {m.positive}-{m.negative}: {len(m.alpha)} SV ({at_bound} at C), rho={m.rho:.6g}, "
                f"iterations={m.n_iter}, converged={m.converged}"
            )
    else:
        for name, arr in model.params().items():
            zeros = int(np.sum(arr == 0))
            lines.append(f"{name}: shape {arr.shape}, {zeros}/{arr.size} zero ({zeros / max(arr.size, 1):.1%})")
        lines.append(f"iterations: {model.n_iter}")
    return "\n".join(lines)
