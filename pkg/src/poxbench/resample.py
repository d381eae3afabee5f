"""SMOTE oversampling, ENN cleaning and their composition on feature rows.

Distances are plain Euclidean in the raw feature space; nothing is scaled
first. Every synthetic row records the parent and neighbour it was
interpolated between and the coefficient used, which is what the leakage
audit and the convexity checks rely on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import InputError, ResamplingError


@dataclass(frozen=True)
class ResampleConfig:
    k_smote: int = 5
    k_enn: int = 3
    # None balances every class up to the majority count
    target: Mapping[int, int] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.k_smote < 1:
            raise ResamplingError("k_smote must be >= 1")
        if self.k_enn < 1 or self.k_enn % 2 == 0:
            raise ResamplingError("k_enn must be a positive odd integer")


@dataclass(frozen=True, eq=False)
class LabeledFeatures:
    """Feature rows with labels and per-row provenance.

    ``row_ids`` holds the manifest index of each original row and -1 for
    synthetic rows. For synthetic rows ``parent``/``neighbor`` are positions
    in the data SMOTE was run on, ``parent_id``/``neighbor_id`` the manifest
    indices behind them, and ``coef`` the interpolation coefficient.
    """

    X: np.ndarray
    y: np.ndarray
    row_ids: np.ndarray
    synthetic: np.ndarray = None
    parent: np.ndarray = None
    neighbor: np.ndarray = None
    parent_id: np.ndarray = None
    neighbor_id: np.ndarray = None
    coef: np.ndarray = None
    stages: tuple = field(default=())

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        n = len(y)
        if X.ndim != 2 or X.shape[0] != n:
            raise InputError(f"X has shape {X.shape}, expected {n} rows")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "row_ids", np.asarray(self.row_ids, dtype=np.int64))
        defaults = {
            "synthetic": np.zeros(n, bool),
            "parent": np.full(n, -1, np.int64),
            "neighbor": np.full(n, -1, np.int64),
            "parent_id": np.full(n, -1, np.int64),
            "neighbor_id": np.full(n, -1, np.int64),
            "coef": np.full(n, np.nan),
        }
        for name, default in defaults.items():
            value = getattr(self, name)
            object.__setattr__(self, name, default if value is None else np.asarray(value, dtype=default.dtype))

    @classmethod
    def from_rows(cls, X, y, row_ids=None) -> "LabeledFeatures":
        n = len(y)
        return cls(X, y, np.arange(n) if row_ids is None else row_ids)

    def __len__(self) -> int:
        return len(self.y)

    def counts(self, n_classes: int | None = None) -> dict[int, int]:
        n_classes = int(self.y.max()) + 1 if n_classes is None and len(self.y) else (n_classes or 0)
        return {c: int(v) for c, v in enumerate(np.bincount(self.y, minlength=n_classes))}

    def take(self, keep: np.ndarray) -> "LabeledFeatures":
        return LabeledFeatures(
            self.X[keep], self.y[keep], self.row_ids[keep], self.synthetic[keep], self.parent[keep],
            self.neighbor[keep], self.parent_id[keep], self.neighbor_id[keep], self.coef[keep], self.stages,
        )

    def origins(self) -> set[int]:
        """Manifest indices every row (original or synthetic) depends on."""
        ids = set(self.row_ids[~self.synthetic].tolist())
        ids |= set(self.parent_id[self.synthetic].tolist())
        ids |= set(self.neighbor_id[self.synthetic].tolist())
        return ids


def squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, exact for small problems."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[0] * B.shape[0] * A.shape[1] <= 4_000_000:
        diff = A[:, None, :] - B[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    return np.maximum(d2, 0.0)


def _nearest(d2_row: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    # ties on distance go to the lower row index
    order = np.lexsort((candidates, d2_row))
    return candidates[order[:k]]


def knn_same_class(X: np.ndarray, y: np.ndarray, i: int, k: int) -> np.ndarray:
    """The ``k`` nearest rows sharing row ``i``'s label, excluding ``i`` itself."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    members = np.flatnonzero(y == y[i])
    members = members[members != i]
    if len(members) < k:
        raise ResamplingError(f"class {y[i]} has {len(members) + 1} members, need at least {k + 1} for k={k}")
    diff = X[members] - X[i]
    d2 = np.einsum("ij,ij->i", diff, diff)
    return _nearest(d2, members, k)


def _class_neighbors(X: np.ndarray, members: np.ndarray, k: int) -> np.ndarray:
    d2 = squared_distances(X[members], X[members])
    out = np.empty((len(members), k), dtype=np.int64)
    local = np.arange(len(members))
    for a in range(len(members)):
        cand = local[local != a]
        out[a] = members[_nearest(d2[a, cand], cand, k)]
    return out


def _targets(counts: np.ndarray, cfg: ResampleConfig) -> np.ndarray:
    if cfg.target is None:
        return np.full_like(counts, counts.max())
    out = counts.copy()
    for c, t in cfg.target.items():
        if c >= len(out):
            raise ResamplingError(f"target given for unknown class {c}")
        out[c] = max(int(t), counts[c])
    return out


def smote(data: LabeledFeatures, cfg: ResampleConfig, n_classes: int | None = None) -> LabeledFeatures:
    """Oversample classes to their target count by same-class interpolation.

    A synthetic row is ``x_p + u * (x_nn - x_p)`` for a uniformly drawn class
    member ``p``, one of its ``k_smote`` nearest same-class neighbours, and
    ``u ~ U[0, 1)``. Originals are returned unchanged and first.
    """
    if len(data) == 0:
        return data
    n_classes = int(data.y.max()) + 1 if n_classes is None else n_classes
    counts = np.bincount(data.y, minlength=n_classes)
    targets = _targets(counts, cfg)
    new_X, new_y, parents, neighbors, coefs = [], [], [], [], []
    for c in range(n_classes):
        need = int(targets[c] - counts[c])
        if need <= 0:
            continue
        if counts[c] <= cfg.k_smote:
            raise ResamplingError(
                f"class {c} has {counts[c]} samples; SMOTE with k={cfg.k_smote} needs more than {cfg.k_smote}"
            )
        members = np.flatnonzero(data.y == c)
        nbrs = _class_neighbors(data.X, members, cfg.k_smote)
        rng = np.random.default_rng([cfg.seed, c])
        pick = rng.integers(0, len(members), size=need)
        which = rng.integers(0, cfg.k_smote, size=need)
        u = rng.random(need)
        p = members[pick]
        q = nbrs[pick, which]
        new_X.append(data.X[p] + u[:, None] * (data.X[q] - data.X[p]))
        new_y.append(np.full(need, c))
        parents.append(p)
        neighbors.append(q)
        coefs.append(u)
    before = data.counts(n_classes)
    if not new_X:
        return replace(data, stages=data.stages + (("smote", before, before),))
    m = sum(len(a) for a in new_y)
    parents_all = np.concatenate(parents)
    neighbors_all = np.concatenate(neighbors)
    out = LabeledFeatures(
        X=np.vstack([data.X] + new_X),
        y=np.concatenate([data.y] + new_y),
        row_ids=np.concatenate([data.row_ids, np.full(m, -1)]),
        synthetic=np.concatenate([data.synthetic, np.ones(m, bool)]),
        parent=np.concatenate([data.parent, parents_all]),
        neighbor=np.concatenate([data.neighbor, neighbors_all]),
        parent_id=np.concatenate([data.parent_id, data.row_ids[parents_all]]),
        neighbor_id=np.concatenate([data.neighbor_id, data.row_ids[neighbors_all]]),
        coef=np.concatenate([data.coef] + coefs),
    )
    return replace(out, stages=data.stages + (("smote", before, out.counts(n_classes)),))


def enn_removals(X: np.ndarray, y: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of rows whose k-NN majority label differs from their own.

    The majority is the most frequent label among the ``k`` nearest other
    rows, ties going to the lowest class id; neighbours are ranked by
    distance then row index.
    """
    n = len(y)
    d2 = squared_distances(X, X)
    idx = np.arange(n)
    remove = np.zeros(n, dtype=bool)
    n_classes = int(y.max()) + 1
    for i in range(n):
        cand = idx[idx != i]
        nn = _nearest(d2[i, cand], cand, k)
        votes = np.bincount(y[nn], minlength=n_classes)
        remove[i] = int(np.argmax(votes)) != y[i]
    return remove


def enn_clean(data: LabeledFeatures, k_enn: int = 3) -> LabeledFeatures:
    """Single-pass Edited Nearest Neighbours against the uncleaned set."""
    n = len(data)
    if n < k_enn + 1:
        raise ResamplingError(f"ENN with k={k_enn} needs at least {k_enn + 1} rows, got {n}")
    n_classes = int(data.y.max()) + 1
    before = data.counts(n_classes)
    if np.all(data.X == data.X[0]):
        warnings.warn("all rows identical; ENN has no neighbourhood structure, nothing removed", stacklevel=2)
        return replace(data, stages=data.stages + (("enn", before, before),))
    keep = ~enn_removals(data.X, data.y, k_enn)
    out = data.take(keep)
    return replace(out, stages=data.stages + (("enn", before, out.counts(n_classes)),))


def smoteenn(data: LabeledFeatures, cfg: ResampleConfig, n_classes: int | None = None) -> LabeledFeatures:
    """SMOTE followed by ENN; ``stages`` records per-class counts around each step."""
    return enn_clean(smote(data, cfg, n_classes), cfg.k_enn)


def dump_resampled(data: LabeledFeatures, path: Path | str, spec_digest: str) -> tuple[Path, Path]:
    """Write rows to the feature-cache format plus a TSV provenance sidecar.

    Synthetic rows get negative row ids (-1, -2, ...) in the cache so ids
    stay unique; the sidecar maps them back to parent and neighbour.
    """
    from .features import FeatureMatrix, cache_store

    path = Path(path)
    ids = data.row_ids.copy()
    syn = np.flatnonzero(data.synthetic)
    ids[syn] = -1 - np.arange(len(syn))
    cache_store(FeatureMatrix(data.X, ids, "resampled", spec_digest), path)
    side = path.with_name(path.name + ".provenance.tsv")
    lines = ["row_id\tlabel\tsynthetic\tparent_id\tneighbor_id\tcoef"]
    for r in range(len(data)):
        coef = "" if not data.synthetic[r] else repr(float(data.coef[r]))
        lines.append(
            f"{ids[r]}\t{data.y[r]}\t{int(data.synthetic[r])}\t{data.parent_id[r]}\t{data.neighbor_id[r]}\t{coef}"
        )
    side.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path, side
