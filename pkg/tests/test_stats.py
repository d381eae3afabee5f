from __future__ import annotations

import math
from itertools import combinations
from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poxbench.errors import DegenerateSampleError, InputError
from poxbench.stats import (
    TestResult,
    enumerate_u_pvalue,
    holm,
    mann_whitney_u,
    midranks,
    pairwise_significance,
    shapiro_wilk,
    u_distribution,
)

scipy_stats = pytest.importorskip("scipy.stats")

# fixed vectors shaped like fold-kappa results plus a few classic shapes
REFERENCE_VECTORS = [
    [0.7119, 0.6934, 0.7301, 0.7055, 0.6890, 0.7412, 0.7188, 0.6999, 0.7254, 0.7083],
    [148, 154, 158, 160, 161, 162, 166, 170, 182, 195, 236],
    [1.0, 2.0, 4.0],
    [0.1, 0.2, 0.25, 0.9, 1.8, 3.0, 4.4, 7.1],
    list(np.exp(np.linspace(-2, 2, 25))),
    [3.1, 2.9, 3.0, 3.05, 2.95, 10.0, 3.02, 2.98, 3.01, 2.99, 3.03, 2.97, 3.0, 3.04],
]


def test_shapiro_matches_reference_implementation():
    for v in REFERENCE_VECTORS:
        ours = shapiro_wilk(v)
        ref = scipy_stats.shapiro(v)
        assert ours.statistic == pytest.approx(ref.statistic, abs=1e-3)
        assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-3)


@pytest.mark.parametrize("n", [3, 4, 5, 6, 7, 11, 12, 20, 50, 200])
def test_shapiro_random_sizes_match_reference(n):
    x = np.random.default_rng(n).gamma(2.0, size=n)
    ours = shapiro_wilk(x)
    ref = scipy_stats.shapiro(x)
    assert ours.statistic == pytest.approx(ref.statistic, abs=1e-6)
    assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-6)


def test_shapiro_normal_scores_are_nearly_perfect():
    n = 20
    x = [NormalDist().inv_cdf((i - 0.375) / (n + 0.25)) for i in range(1, n + 1)]
    res = shapiro_wilk(x)
    assert res.statistic >= 0.99
    assert not res.reject


@settings(max_examples=100, deadline=None)
@given(
    seed=st.integers(0, 2**20),
    n=st.integers(3, 60),
    scale_exp=st.integers(-10, 10),
    shift=st.integers(-1000, 1000),
)
def test_shapiro_location_scale_invariance(seed, n, scale_exp, shift):
    # dyadic data, power-of-two scale and integer shift keep s * x + t exact,
    # so any difference comes from the statistic and not from rounding the input
    x = np.random.default_rng(seed).integers(-(2**20), 2**20, n) / 2**10
    if np.ptp(x) == 0:
        return
    y = 2.0**scale_exp * x + shift
    assert np.array_equal((y - shift) / 2.0**scale_exp, x)
    assert abs(shapiro_wilk(y).statistic - shapiro_wilk(x).statistic) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**20), n=st.integers(3, 60), scale=st.floats(1e-3, 1e3), shift=st.floats(-1e3, 1e3))
def test_shapiro_invariance_under_inexact_transforms(seed, n, scale, shift):
    # here s * x + t is itself rounded, which perturbs W by about eps * |t| / (s * spread)
    x = np.random.default_rng(seed).normal(size=n)
    assert shapiro_wilk(scale * x + shift).statistic == pytest.approx(shapiro_wilk(x).statistic, abs=1e-9)


def test_shapiro_errors():
    with pytest.raises(DegenerateSampleError):
        shapiro_wilk([1, 1, 1, 1])
    with pytest.raises(InputError):
        shapiro_wilk([1, 2])
    with pytest.raises(InputError):
        shapiro_wilk([1, 2, float("nan")])


def test_result_reject_follows_alpha():
    assert TestResult(0.0, 0.049, "x").reject
    assert not TestResult(0.0, 0.05, "x").reject


# --------------------------------------------------------------------------- #
# Mann-Whitney


def test_three_versus_three():
    res = mann_whitney_u([1, 2, 3], [4, 5, 6])
    assert res.statistic == 0.0
    assert res.p_value == pytest.approx(0.1, abs=1e-15)
    assert res.method == "mann-whitney-exact"


def test_identical_samples():
    a = list(np.linspace(0.6, 0.8, 10))
    res = mann_whitney_u(a, a)
    assert res.statistic == 50.0
    assert res.p_value == pytest.approx(1.0)
    assert not res.reject


def test_large_shift_is_significant():
    rng = np.random.default_rng(0)
    a = 0.7 + 0.01 * rng.normal(size=10)
    res = mann_whitney_u(a, a + 0.1)
    assert res.reject
    assert res.p_value == pytest.approx(scipy_stats.mannwhitneyu(a, a + 0.1, method="asymptotic").pvalue, rel=1e-9)


def test_exact_equals_enumeration_for_all_small_sizes():
    rng = np.random.default_rng(5)
    for n1 in range(1, 9):
        for n2 in range(1, 9):
            if n1 + n2 > 16:
                continue
            pooled = rng.permutation(n1 + n2).astype(float) + rng.random()
            a, b = pooled[:n1], pooled[n1:]
            res = mann_whitney_u(a, b)
            assert res.method == "mann-whitney-exact"
            assert res.p_value == pytest.approx(enumerate_u_pvalue(a, b), abs=1e-12)


def test_exact_beyond_default_threshold_when_raised():
    # |a| = |b| = 8 is 16 in total; a raised threshold keeps 8 + 9 exact too
    rng = np.random.default_rng(9)
    pooled = rng.permutation(17).astype(float)
    res = mann_whitney_u(pooled[:8], pooled[8:], exact_max_n=17)
    assert res.method == "mann-whitney-exact"
    assert res.p_value == pytest.approx(enumerate_u_pvalue(pooled[:8], pooled[8:]), abs=1e-12)


def test_u_distribution_sums_to_binomial():
    for n1 in range(0, 7):
        for n2 in range(0, 7):
            dist = u_distribution(n1, n2)
            assert sum(dist) == math.comb(n1 + n2, n1)
            assert dist == dist[::-1]


def test_exact_matches_scipy_exact():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = rng.normal(size=int(rng.integers(2, 8)))
        b = rng.normal(size=int(rng.integers(2, 8)))
        assert mann_whitney_u(a, b).p_value == pytest.approx(
            scipy_stats.mannwhitneyu(a, b, method="exact").pvalue, abs=1e-12
        )


def test_normal_path_matches_scipy_with_ties():
    a = [0.70, 0.71, 0.71, 0.72, 0.73, 0.73, 0.74, 0.75, 0.70, 0.76]
    b = [0.71, 0.72, 0.74, 0.74, 0.77, 0.78, 0.78, 0.79, 0.80, 0.73]
    res = mann_whitney_u(a, b)
    ref = scipy_stats.mannwhitneyu(a, b, method="asymptotic", use_continuity=True)
    assert res.method == "mann-whitney-normal"
    assert res.statistic == ref.statistic
    assert res.p_value == pytest.approx(ref.pvalue, rel=1e-9)


@settings(max_examples=80, deadline=None)
@given(
    a=st.lists(st.integers(0, 20), min_size=1, max_size=12),
    b=st.lists(st.integers(0, 20), min_size=1, max_size=12),
)
def test_symmetry_and_u_sum(a, b):
    ab = mann_whitney_u(a, b)
    ba = mann_whitney_u(b, a)
    assert ab.p_value == pytest.approx(ba.p_value, abs=1e-12)
    assert ab.statistic + ba.statistic == len(a) * len(b)
    assert 0.0 <= ab.p_value <= 1.0


@settings(max_examples=60, deadline=None)
@given(
    a=st.lists(st.floats(-5, 5), min_size=1, max_size=10),
    b=st.lists(st.floats(-5, 5), min_size=1, max_size=10),
    shift=st.floats(0.01, 5),
)
def test_shifting_a_up_never_raises_b_rank_sum(a, b, shift):
    n1 = len(a)
    before = midranks(np.array(a + b))[n1:].sum()
    after = midranks(np.array([x + shift for x in a] + b))[n1:].sum()
    assert after <= before + 1e-9


def test_midranks_average_ties():
    assert midranks(np.array([3.0, 1.0, 3.0, 2.0])).tolist() == [3.5, 1.0, 3.5, 2.0]


def test_enumeration_oracle_itself():
    # {1,2} vs {3}: splits of three ranks give U in {0, 1, 2}, one way each
    assert enumerate_u_pvalue([1, 2], [3]) == pytest.approx(2 / 3)
    assert len(list(combinations(range(3), 2))) == 3


def test_empty_sample():
    with pytest.raises(InputError):
        mann_whitney_u([], [1.0])
    with pytest.raises(InputError):
        mann_whitney_u([1.0], [float("inf")])


# --------------------------------------------------------------------------- #
# Holm and the pairwise matrix


def test_holm_adjustment():
    raw = [TestResult(0, p, "x") for p in (0.01, 0.04, 0.03)]
    adj = [r.p_value for r in holm(raw)]
    # sorted 0.01, 0.03, 0.04 -> 0.03, 0.06, 0.06 (running max)
    assert adj == pytest.approx([0.03, 0.06, 0.06])
    assert all(r.correction == "holm" for r in holm(raw))


def test_pairwise_identical_vectors_not_significant():
    v = [0.70, 0.72, 0.71, 0.69, 0.73, 0.70, 0.74, 0.68, 0.71, 0.72]
    sig = pairwise_significance({"logreg": v, "mlp": list(v)})
    assert not sig.result("mlp", "logreg").reject
    assert set(sig.normality) == {"logreg", "mlp"}


def test_pairwise_shifted_model_stands_out():
    rng = np.random.default_rng(1)
    base = 0.7 + 0.01 * rng.normal(size=10)
    other = 0.7 + 0.01 * rng.normal(size=10)
    sig = pairwise_significance({"logreg": base, "mlp": other, "svm": base - 0.10})
    assert sig.result("logreg", "svm").reject
    assert sig.result("mlp", "svm").reject
    assert len(sig.pairs) == 3


def test_pairwise_constant_vector_noted():
    sig = pairwise_significance({"a": [1.0] * 10, "b": list(np.linspace(0.5, 0.9, 10))})
    assert sig.normality["a"] is None
    assert any("constant" in n for n in sig.notes)
    assert not sig.all_normal


def test_pairwise_length_mismatch():
    with pytest.raises(InputError):
        pairwise_significance({"a": [1, 2, 3], "b": [1, 2]})
    with pytest.raises(InputError):
        pairwise_significance({"a": [1, 2, 3]}, correction="bonferroni")


def test_pairwise_with_holm():
    rng = np.random.default_rng(2)
    k = {m: rng.normal(size=10) + i for i, m in enumerate(("a", "b", "c"))}
    raw = pairwise_significance(k)
    adj = pairwise_significance(k, correction="holm")
    for key in raw.pairs:
        assert adj.pairs[key].p_value >= raw.pairs[key].p_value
        assert adj.pairs[key].correction == "holm"
