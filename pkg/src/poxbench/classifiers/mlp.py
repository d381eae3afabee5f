"""One-hidden-layer perceptron with logistic hidden units, trained by Adam.

Loss on a batch of size m is mean softmax cross-entropy plus
``0.5 * l2_alpha * (||W1||^2 + ||W2||^2) / m``. With the ``invscaling``
schedule, Adam's base step is divided by ``epoch ** power_t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import TrainingError
from ._common import check_training_data, log_softmax, softmax

PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass(frozen=True)
class MlpConfig:
    hidden: tuple[int, ...] = (100,)
    l2_alpha: float = 0.05
    learning_rate: float = 1e-3
    lr_schedule: str = "invscaling"
    power_t: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 200
    batch_size: int = 200
    tol: float = 1e-4
    n_iter_no_change: int = 10
    seed: int = 0

    def __post_init__(self):
        if len(self.hidden) != 1 or self.hidden[0] < 1:
            raise TrainingError(f"exactly one hidden layer of size >= 1 is supported, got {self.hidden}")
        if self.l2_alpha < 0:
            raise TrainingError("l2_alpha must be >= 0")
        if self.lr_schedule not in ("invscaling", "constant"):
            raise TrainingError(f"unknown lr_schedule {self.lr_schedule!r}")


@dataclass(frozen=True, eq=False)
class MlpModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    classes: tuple
    n_iter: int = 0
    loss_curve: tuple = ()
    config: MlpConfig | None = None

    kind = "mlp"

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        h = _sigmoid(np.asarray(X, dtype=np.float64) @ self.W1 + self.b1)
        return h @ self.W2 + self.b2

    @property
    def n_features(self) -> int:
        return self.W1.shape[0]

    def params(self) -> dict:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


def _sigmoid(a: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def init_params(d: int, hidden: int, n_classes: int, rng: np.random.Generator) -> dict:
    """Glorot-uniform init with the logistic-activation gain."""
    params = {}
    for name, fan_in, fan_out in (("1", d, hidden), ("2", hidden, n_classes)):
        bound = np.sqrt(2.0 / (fan_in + fan_out))
        params["W" + name] = rng.uniform(-bound, bound, (fan_in, fan_out))
        params["b" + name] = rng.uniform(-bound, bound, fan_out)
    return params


def loss_and_grad(params: dict, X: np.ndarray, Y: np.ndarray, l2_alpha: float) -> tuple[float, dict]:
    """Batch loss and exact gradients. ``Y`` is one-hot, shape (m, C)."""
    m = X.shape[0]
    h = _sigmoid(X @ params["W1"] + params["b1"])
    z = h @ params["W2"] + params["b2"]
    logp = log_softmax(z)
    penalty = 0.5 * l2_alpha * ((params["W1"] ** 2).sum() + (params["W2"] ** 2).sum()) / m
    loss = float(-(Y * logp).sum() / m + penalty)
    dz = (np.exp(logp) - Y) / m
    dh = dz @ params["W2"].T
    da = dh * h * (1.0 - h)
    grads = {
        "W2": h.T @ dz + l2_alpha * params["W2"] / m,
        "b2": dz.sum(0),
        "W1": X.T @ da + l2_alpha * params["W1"] / m,
        "b1": da.sum(0),
    }
    return loss, grads


def train_mlp(X: np.ndarray, y: np.ndarray, cfg: MlpConfig = MlpConfig(), classes=None) -> MlpModel:
    X, y, classes = check_training_data(X, y, classes)
    n, d = X.shape
    C = len(classes)
    rng = np.random.default_rng(cfg.seed)
    params = init_params(d, cfg.hidden[0], C, rng)
    Y = np.eye(C)[y]
    batch = max(1, min(cfg.batch_size, n))
    m1 = {k: np.zeros_like(v) for k, v in params.items()}
    m2 = {k: np.zeros_like(v) for k, v in params.items()}
    t = 0
    curve: list[float] = []
    best = np.inf
    stale = 0
    epochs = 0
    for epoch in range(1, cfg.max_epochs + 1):
        lr = cfg.learning_rate / epoch**cfg.power_t if cfg.lr_schedule == "invscaling" else cfg.learning_rate
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = perm[start : start + batch]
            loss, grads = loss_and_grad(params, X[idx], Y[idx], cfg.l2_alpha)
            if not np.isfinite(loss):
                norms = {k: float(np.linalg.norm(v)) for k, v in params.items()}
                raise TrainingError(f"MLP loss became {loss} at epoch {epoch} (lr={lr:.3g}, parameter norms {norms})")
            total += loss * len(idx)
            t += 1
            step = lr * np.sqrt(1.0 - cfg.beta2**t) / (1.0 - cfg.beta1**t)
            for k in PARAM_NAMES:
                g = grads[k]
                m1[k] = cfg.beta1 * m1[k] + (1.0 - cfg.beta1) * g
                m2[k] = cfg.beta2 * m2[k] + (1.0 - cfg.beta2) * g * g
                params[k] = params[k] - step * m1[k] / (np.sqrt(m2[k]) + cfg.epsilon)
        epochs = epoch
        epoch_loss = total / n
        curve.append(epoch_loss)
        if epoch_loss > best - cfg.tol:
            stale += 1
        else:
            stale = 0
        best = min(best, epoch_loss)
        if stale > cfg.n_iter_no_change:
            break
    return MlpModel(params["W1"], params["b1"], params["W2"], params["b2"], classes, epochs, tuple(curve), cfg)


def predict_proba(model: MlpModel, X: np.ndarray) -> np.ndarray:
    return softmax(model.decision_function(X))
