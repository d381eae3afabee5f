"""Kernel SVM with the sigmoid kernel, trained by SMO, one-vs-one multiclass.

Each binary problem solves the dual

    min_a  0.5 a^T Q a - e^T a,   Q_ij = y_i y_j K(x_i, x_j),
    s.t.   y^T a = 0,  0 <= a_i <= C

with maximal-violating-pair / second-order working-set selection. The
sigmoid kernel tanh(gamma <x, z> + coef0) is not positive semi-definite, so
non-positive curvature along a pair is replaced by a small constant.
Iteration stops once the largest KKT violation drops below ``tol``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from ..errors import TrainingError
from ._common import check_training_data

TAU = 1e-12


@dataclass(frozen=True)
class SvmConfig:
    C: float = 100.0
    kernel: str = "sigmoid"
    gamma: float | None = None  # None -> 1 / n_features
    coef0: float = 0.0
    degree: int = 2  # has no effect on the sigmoid kernel; kept for config parity
    tol: float = 1e-3
    max_passes: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.C <= 0:
            raise TrainingError("C must be positive")
        if self.gamma is not None and self.gamma <= 0:
            raise TrainingError("gamma must be positive")
        if self.kernel not in ("sigmoid", "linear"):
            raise TrainingError(f"unsupported kernel {self.kernel!r}")


def kernel_matrix(A: np.ndarray, B: np.ndarray, kernel: str, gamma: float, coef0: float) -> np.ndarray:
    G = np.asarray(A, dtype=np.float64) @ np.asarray(B, dtype=np.float64).T
    if kernel == "linear":
        return G
    return np.tanh(gamma * G + coef0)


@dataclass(frozen=True, eq=False)
class BinarySvm:
    """One pairwise machine; ``positive`` is the lower class id (label +1)."""

    positive: int
    negative: int
    support: np.ndarray  # rows of SvmModel.support_vectors
    alpha: np.ndarray
    y: np.ndarray  # +-1 per support vector
    rho: float
    n_iter: int
    converged: bool

    @property
    def dual_coef(self) -> np.ndarray:
        return self.alpha * self.y


@dataclass(frozen=True, eq=False)
class SvmModel:
    support_vectors: np.ndarray
    machines: tuple
    classes: tuple
    kernel: str
    gamma: float
    coef0: float
    degree: int
    C: float
    n_features: int = field(default=0)
    config: SvmConfig | None = None

    kind = "svm"

    def pairwise_decisions(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        K = kernel_matrix(X, self.support_vectors, self.kernel, self.gamma, self.coef0)
        out = np.empty((X.shape[0], len(self.machines)))
        for m, mach in enumerate(self.machines):
            out[:, m] = K[:, mach.support] @ mach.dual_coef - mach.rho
        return out

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        """Vote counts per class; argmax with lowest-id ties gives the label."""
        dec = self.pairwise_decisions(X)
        votes = np.zeros((dec.shape[0], len(self.classes)))
        for m, mach in enumerate(self.machines):
            pos = dec[:, m] >= 0
            votes[pos, mach.positive] += 1
            votes[~pos, mach.negative] += 1
        return votes

    def params(self) -> dict:
        return {"support_vectors": self.support_vectors}


@numba.njit(cache=True)
def _smo(K, y, C, eps, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    converged = False
    while it < max_iter:
        Gmax = -np.inf
        i = -1
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                v = -y[t] * G[t]
                if v >= Gmax:
                    Gmax = v
                    i = t
        Gmax2 = -np.inf
        j = -1
        obj_min = np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                v = y[t] * G[t]
                if v >= Gmax2:
                    Gmax2 = v
                if i >= 0:
                    grad_diff = Gmax + v
                    if grad_diff > 0:
                        quad = K[i, i] + K[t, t] - 2.0 * K[i, t]
                        if quad <= 0:
                            quad = TAU
                        obj = -(grad_diff * grad_diff) / quad
                        if obj <= obj_min:
                            obj_min = obj
                            j = t
        if i < 0 or j < 0 or Gmax + Gmax2 < eps:
            converged = True
            break
        it += 1
        Qij = y[i] * y[j] * K[i, j]
        old_ai = alpha[i]
        old_aj = alpha[j]
        if y[i] != y[j]:
            quad = K[i, i] + K[j, j] + 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = K[i, i] + K[j, j] - 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            s = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if s > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = s - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = s - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s
        dai = alpha[i] - old_ai
        daj = alpha[j] - old_aj
        for k in range(n):
            G[k] += y[k] * (y[i] * K[k, i] * dai + y[j] * K[k, j] * daj)

    # offset: average over free vectors, else midpoint of the feasible interval
    ub = np.inf
    lb = -np.inf
    n_free = 0
    sum_free = 0.0
    for t in range(n):
        yG = y[t] * G[t]
        if alpha[t] >= C:
            if y[t] < 0:
                ub = min(ub, yG)
            else:
                lb = max(lb, yG)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yG)
            else:
                lb = max(lb, yG)
        else:
            n_free += 1
            sum_free += yG
    if n_free > 0:
        rho = sum_free / n_free
    else:
        rho = (ub + lb) / 2.0
    return alpha, rho, it, converged


def solve_binary(K: np.ndarray, y: np.ndarray, C: float, tol: float, max_iter: int):
    """Run SMO on a precomputed kernel; returns (alpha, rho, iterations, converged)."""
    return _smo(np.ascontiguousarray(K, dtype=np.float64), np.asarray(y, dtype=np.float64), float(C), float(tol), int(max_iter))


def train_svm(X: np.ndarray, y: np.ndarray, cfg: SvmConfig = SvmConfig(), classes=None) -> SvmModel:
    X, y, classes = check_training_data(X, y, classes)
    n, d = X.shape
    gamma = cfg.gamma if cfg.gamma is not None else 1.0 / d
    K_full = kernel_matrix(X, X, cfg.kernel, gamma, cfg.coef0)
    present = np.unique(y)
    raw = []
    for ai, a in enumerate(present):
        for b in present[ai + 1 :]:
            rows = np.flatnonzero((y == a) | (y == b))
            yy = np.where(y[rows] == a, 1.0, -1.0)
            K = K_full[np.ix_(rows, rows)]
            alpha, rho, it, ok = solve_binary(K, yy, cfg.C, cfg.tol, cfg.max_passes * len(rows))
            if not ok:
                warnings.warn(
                    f"SMO for classes {a} vs {b} stopped after {it} iterations without reaching tol={cfg.tol}",
                    stacklevel=2,
                )
            sv = alpha > 0
            if not sv.any():
                raise TrainingError(f"SMO for classes {a} vs {b} produced no support vectors")
            raw.append((int(a), int(b), rows[sv], alpha[sv], yy[sv], float(rho), int(it), bool(ok)))
    used = np.unique(np.concatenate([r[2] for r in raw]))
    where = {int(v): k for k, v in enumerate(used)}
    machines = tuple(
        BinarySvm(a, b, np.array([where[int(r)] for r in rows]), alpha, yy, rho, it, ok)
        for a, b, rows, alpha, yy, rho, it, ok in raw
    )
    return SvmModel(X[used].copy(), machines, classes, cfg.kernel, gamma, cfg.coef0, cfg.degree, cfg.C, d, cfg)
