from __future__ import annotations

import numpy as np

from ..errors import InputError, TrainingError


def check_training_data(X, y, classes=None):
    """Validate a training set; returns float64 X, int64 y and the class tuple.

    ``classes`` defaults to ``range(max(y) + 1)``; labels are class ids.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2:
        raise InputError(f"X must be 2-D, got shape {X.shape}")
    if X.shape[0] != len(y):
        raise InputError(f"X has {X.shape[0]} rows but y has {len(y)} labels")
    if not np.isfinite(X).all():
        raise InputError("features contain NaN or Inf")
    if len(y) == 0 or len(np.unique(y)) < 2:
        raise TrainingError("training needs at least two distinct classes")
    if y.min() < 0:
        raise InputError("labels must be non-negative class ids")
    if classes is None:
        classes = tuple(range(int(y.max()) + 1))
    classes = tuple(classes)
    if y.max() >= len(classes):
        raise InputError(f"label {y.max()} outside the {len(classes)} declared classes")
    return np.ascontiguousarray(X), y, classes


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])
