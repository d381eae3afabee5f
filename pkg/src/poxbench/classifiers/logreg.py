"""Multinomial logistic regression with an L1 penalty, fitted by SAGA.

Objective, in per-sample mean form::

    F(W, b) = mean_i CE(softmax(x_i W + b), y_i) + lam * ||W||_1,
    lam = 1 / (inv_reg_strength * n)

which is the usual "C times summed loss plus ||W||_1" convention divided
through by C * n. The bias is not penalised. Each SAGA step takes a
variance-reduced gradient step followed by soft-thresholding of W.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..errors import TrainingError
from ._common import check_training_data, log_softmax


@dataclass(frozen=True)
class LogRegConfig:
    inv_reg_strength: float = 0.1
    max_iter: int = 326
    tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.inv_reg_strength <= 0:
            raise TrainingError("inv_reg_strength must be positive")
        if self.max_iter < 1:
            raise TrainingError("max_iter must be >= 1")


@dataclass(frozen=True, eq=False)
class LinearModel:
    W: np.ndarray
    b: np.ndarray
    classes: tuple
    n_iter: int = 0
    objective_history: tuple = ()
    config: LogRegConfig | None = None

    kind = "logreg"

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.W + self.b

    @property
    def n_features(self) -> int:
        return self.W.shape[0]

    def params(self) -> dict:
        return {"W": self.W, "b": self.b}


def objective(W: np.ndarray, b: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float) -> float:
    logp = log_softmax(X @ W + b)
    return float(-logp[np.arange(len(y)), y].mean() + lam * np.abs(W).sum())


@numba.njit(cache=True)
def _saga_epoch(X, y, W, b, R, G, gb, order, step, lam):
    n, d = X.shape
    C = W.shape[1]
    z = np.empty(C)
    dr = np.empty(C)
    inv_n = 1.0 / n
    thresh = step * lam
    for t in range(order.shape[0]):
        j = order[t]
        xj = X[j]
        # W is (d, C) row-major: walk it row by row
        for c in range(C):
            z[c] = b[c]
        for f in range(d):
            xf = xj[f]
            for c in range(C):
                z[c] += xf * W[f, c]
        zmax = z.max()
        s = 0.0
        for c in range(C):
            z[c] = np.exp(z[c] - zmax)
            s += z[c]
        for c in range(C):
            r = z[c] / s
            if c == y[j]:
                r -= 1.0
            dr[c] = r - R[j, c]
            R[j, c] = r
        for c in range(C):
            b[c] -= step * (dr[c] + gb[c] * inv_n)
            gb[c] += dr[c]
        for f in range(d):
            xf = xj[f]
            for c in range(C):
                g = xf * dr[c]
                v = W[f, c] - step * (g + G[f, c] * inv_n)
                # soft-threshold, written without branches on the sign
                a = abs(v) - thresh
                W[f, c] = np.copysign(a if a > 0.0 else 0.0, v)
                G[f, c] += g


def train_logreg(X: np.ndarray, y: np.ndarray, cfg: LogRegConfig = LogRegConfig(), classes=None) -> LinearModel:
    """Fit by SAGA until the largest per-epoch weight change, relative to
    the largest weight, drops to ``cfg.tol`` or ``max_iter`` epochs run."""
    X, y, classes = check_training_data(X, y, classes)
    n, d = X.shape
    C = len(classes)
    lam = 1.0 / (cfg.inv_reg_strength * n)
    # softmax cross-entropy has curvature <= 1/2 along x (plus the bias term)
    L = 0.5 * (float((X * X).sum(1).max()) + 1.0)
    step = 1.0 / (3.0 * L)

    W = np.zeros((d, C))
    b = np.zeros(C)
    R = np.zeros((n, C))
    G = np.zeros((d, C))
    gb = np.zeros(C)
    rng = np.random.default_rng(cfg.seed)
    history = [objective(W, b, X, y, lam)]
    n_iter = 0
    for epoch in range(cfg.max_iter):
        W_prev, b_prev = W.copy(), b.copy()
        _saga_epoch(X, y, W, b, R, G, gb, rng.integers(0, n, size=n), step, lam)
        n_iter = epoch + 1
        obj = objective(W, b, X, y, lam)
        if not np.isfinite(obj):
            raise TrainingError(f"SAGA diverged at epoch {n_iter} (objective {obj})")
        history.append(obj)
        change = max(np.abs(W - W_prev).max(initial=0.0), np.abs(b - b_prev).max())
        scale = max(np.abs(W).max(initial=0.0), np.abs(b).max())
        if change <= cfg.tol * max(scale, 1e-12):
            break
    return LinearModel(W, b, classes, n_iter, tuple(history), cfg)
