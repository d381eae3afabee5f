from __future__ import annotations

import math
import warnings
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poxbench.errors import ResamplingError
from poxbench.features import cache_load
from poxbench.resample import (
    LabeledFeatures,
    ResampleConfig,
    dump_resampled,
    enn_clean,
    enn_removals,
    knn_same_class,
    smote,
    smoteenn,
)


def brute_knn(X, y, i, k):
    """Sort every same-class row by (distance, index) in plain Python."""
    cand = [j for j in range(len(y)) if j != i and y[j] == y[i]]
    dist = [(math.dist(X[i], X[j]), j) for j in cand]
    return [j for _, j in sorted(dist)[:k]]


def brute_enn(X, y, k):
    """Rows whose k nearest others (any class) vote for a different label."""
    out = []
    for i in range(len(y)):
        others = sorted((math.dist(X[i], X[j]), j) for j in range(len(y)) if j != i)
        votes = Counter(int(y[j]) for _, j in others[:k])
        top = max(votes.values())
        winner = min(c for c, v in votes.items() if v == top)
        out.append(winner != y[i])
    return np.array(out)


def random_imbalanced(rng, n_classes=None, d=None):
    n_classes = n_classes or int(rng.integers(2, 5))
    d = d or int(rng.integers(2, 9))
    counts = rng.integers(7, 30, size=n_classes)
    X = np.vstack([rng.normal(rng.normal(0, 2, d), 1.0, (n, d)) for n in counts])
    y = np.repeat(np.arange(n_classes), counts)
    return LabeledFeatures.from_rows(X, y)


def test_knn_collinear():
    X = np.array([[0.0], [1.0], [3.0]])
    assert knn_same_class(X, np.zeros(3), 1, 1).tolist() == [0]


def test_knn_duplicate_ranked_first():
    X = np.array([[0.0, 0.0], [5.0, 5.0], [0.0, 0.0], [1.0, 0.0]])
    assert knn_same_class(X, np.zeros(4), 0, 1).tolist() == [2]


def test_knn_matches_exhaustive_scan():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 8))
    y = rng.integers(0, 2, 50)
    for i in range(50):
        assert knn_same_class(X, y, i, 5).tolist() == brute_knn(X, y, i, 5)


def test_knn_too_few_members():
    with pytest.raises(ResamplingError, match="class 1"):
        knn_same_class(np.zeros((4, 1)), np.array([0, 0, 1, 1]), 2, 2)


def test_smote_two_point_minority():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [5.0, 0.0], [5.0, 1.0], [6.0, 0.0]])
    y = np.array([1, 1, 0, 0, 0])
    out = smote(LabeledFeatures.from_rows(X, y), ResampleConfig(k_smote=1))
    syn = out.X[out.synthetic]
    assert syn.shape == (1, 2)
    assert syn[0, 0] == syn[0, 1]
    assert 0.0 <= syn[0, 0] <= 1.0
    assert out.y[out.synthetic].tolist() == [1]


def test_smote_balanced_input_is_unchanged():
    rng = np.random.default_rng(1)
    data = LabeledFeatures.from_rows(rng.normal(size=(20, 3)), np.repeat([0, 1], 10))
    out = smote(data, ResampleConfig())
    assert np.array_equal(out.X, data.X) and np.array_equal(out.y, data.y)


def test_smote_reaches_majority_and_keeps_originals():
    rng = np.random.default_rng(2)
    counts = [40, 12, 15, 38]
    X = np.vstack([rng.normal(c * 3, 1, (n, 5)) for c, n in enumerate(counts)])
    data = LabeledFeatures.from_rows(X, np.repeat(np.arange(4), counts))
    out = smote(data, ResampleConfig(seed=4))
    assert out.counts() == {0: 40, 1: 40, 2: 40, 3: 40}
    assert np.array_equal(out.X[:105], data.X)
    assert (out.row_ids[out.synthetic] == -1).all()


def test_smote_explicit_target():
    rng = np.random.default_rng(3)
    data = LabeledFeatures.from_rows(rng.normal(size=(30, 2)), np.repeat([0, 1], [20, 10]))
    out = smote(data, ResampleConfig(target={1: 14}))
    assert out.counts() == {0: 20, 1: 14}


def test_smote_refuses_to_shrink_k():
    data = LabeledFeatures.from_rows(np.arange(12.0).reshape(12, 1), np.array([0] * 9 + [1] * 3))
    with pytest.raises(ResamplingError, match="class 1 has 3"):
        smote(data, ResampleConfig(k_smote=3))


def test_convexity_over_many_corpora():
    rng = np.random.default_rng(7)
    for trial in range(100):
        data = random_imbalanced(rng)
        out = smote(data, ResampleConfig(seed=trial))
        s = np.flatnonzero(out.synthetic)
        p, q, u = out.parent[s], out.neighbor[s], out.coef[s]
        expected = out.X[p] + u[:, None] * (out.X[q] - out.X[p])
        assert np.abs(out.X[s] - expected).max(initial=0.0) <= 1e-9
        assert np.array_equal(out.y[s], out.y[p])
        assert np.array_equal(out.y[p], out.y[q])
        assert ((u >= 0) & (u < 1)).all()
        assert np.array_equal(out.parent_id[s], data.row_ids[p])


def test_smote_is_deterministic():
    data = random_imbalanced(np.random.default_rng(5))
    a = smote(data, ResampleConfig(seed=3))
    b = smote(data, ResampleConfig(seed=3))
    assert np.array_equal(a.X, b.X) and np.array_equal(a.parent, b.parent) and np.array_equal(a.coef, b.coef, equal_nan=True)


def test_enn_separated_clusters_untouched():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(0, 0.1, (10, 2)), rng.normal(10, 0.1, (10, 2))])
    data = LabeledFeatures.from_rows(X, np.repeat([0, 1], 10))
    assert len(enn_clean(data, 3)) == 20


def test_enn_removes_intruder():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(0, 1, (15, 2)), [[0.0, 0.0]]])
    y = np.array([1] * 15 + [0])
    out = enn_clean(LabeledFeatures.from_rows(X, y), 3)
    assert 15 not in out.row_ids.tolist()


def test_enn_matches_bruteforce_oracle():
    rng = np.random.default_rng(11)
    for _ in range(100):
        data = random_imbalanced(rng)
        k = int(rng.choice([1, 3, 5]))
        assert np.array_equal(enn_removals(data.X, data.y, k), brute_enn(data.X, data.y, k))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**20))
def test_enn_output_is_subset(seed):
    data = random_imbalanced(np.random.default_rng(seed))
    out = enn_clean(data, 3)
    assert set(out.row_ids.tolist()) <= set(data.row_ids.tolist())
    keep = ~enn_removals(data.X, data.y, 3)
    assert np.array_equal(out.y, data.y[keep])


def test_enn_identical_rows_warn_and_keep_everything():
    data = LabeledFeatures.from_rows(np.ones((6, 2)), np.array([0, 0, 0, 1, 1, 1]))
    with pytest.warns(UserWarning, match="identical"):
        out = enn_clean(data, 3)
    assert len(out) == 6


def test_enn_needs_enough_rows():
    with pytest.raises(ResamplingError):
        enn_clean(LabeledFeatures.from_rows(np.zeros((3, 1)), np.array([0, 1, 0])), 3)


def test_config_validation():
    with pytest.raises(ResamplingError):
        ResampleConfig(k_enn=2)
    with pytest.raises(ResamplingError):
        ResampleConfig(k_smote=0)


def test_smoteenn_composes_and_records_stages():
    data = random_imbalanced(np.random.default_rng(21), n_classes=3, d=4)
    cfg = ResampleConfig(seed=2)
    out = smoteenn(data, cfg)
    mid = smote(data, cfg)
    keep = ~brute_enn(mid.X, mid.y, 3)
    assert np.array_equal(out.X, mid.X[keep])
    names = [s[0] for s in out.stages]
    assert names == ["smote", "enn"]
    assert out.stages[0][1] == data.counts() and out.stages[1][2] == out.counts()


def test_smoteenn_separated_balanced_is_identity():
    rng = np.random.default_rng(4)
    X = np.vstack([rng.normal(0, 0.1, (12, 3)), rng.normal(9, 0.1, (12, 3))])
    data = LabeledFeatures.from_rows(X, np.repeat([0, 1], 12))
    out = smoteenn(data, ResampleConfig())
    assert np.array_equal(out.X, data.X)


def test_origins_cover_parents_and_neighbours():
    data = random_imbalanced(np.random.default_rng(8))
    data = LabeledFeatures(data.X, data.y, data.row_ids + 100)
    out = smote(data, ResampleConfig())
    assert out.origins() <= set(range(100, 100 + len(data)))
    assert -1 not in out.origins()


def test_dump_resampled_writes_features_and_provenance(tmp_path):
    data = random_imbalanced(np.random.default_rng(9))
    out = smote(data, ResampleConfig())
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        path, side = dump_resampled(out, tmp_path / "r.pxf", "ab" * 32)
    fm = cache_load(path)
    assert fm.n == len(out)
    assert (fm.row_ids < 0).sum() == out.synthetic.sum()
    lines = side.read_text().splitlines()
    assert len(lines) == len(out) + 1
    assert lines[0].split("\t")[0] == "row_id"
