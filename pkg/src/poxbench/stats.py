"""Shapiro-Wilk normality test and the Mann-Whitney U rank test, applied
pairwise to per-fold kappa vectors.

Shapiro-Wilk follows Royston's approximation (algorithm AS R94): polynomial
corrections to the normal-score coefficients and a normalising transform of
log(1 - W). Mann-Whitney is two-sided; it uses the exact null distribution
of U for small untied samples and a tie- and continuity-corrected normal
approximation otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from statistics import NormalDist
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateSampleError, InputError

ALPHA = 0.05
EXACT_MAX_N = 16

_NORMAL = NormalDist()

# polynomial coefficients, lowest order first
_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str  # "shapiro-wilk" | "mann-whitney-exact" | "mann-whitney-normal"
    alpha: float = ALPHA
    correction: str = "none"

    __test__ = False  # keep pytest from collecting this class

    @property
    def reject(self) -> bool:
        return self.p_value < self.alpha


def _poly(c: Sequence[float], x: float) -> float:
    out = 0.0
    for coef in reversed(c):
        out = out * x + coef
    return out


def _upper_tail(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def shapiro_weights(n: int) -> np.ndarray:
    """Antisymmetric coefficient vector applied to the ascending sample."""
    if n < 3:
        raise InputError(f"Shapiro-Wilk needs n >= 3, got {n}")
    half = n // 2
    a = np.zeros(half)
    if n == 3:
        a[0] = math.sqrt(0.5)
    else:
        m = np.array([_NORMAL.inv_cdf((i - 0.375) / (n + 0.25)) for i in range(1, half + 1)])
        summ2 = 2.0 * float((m * m).sum())
        ssumm2 = math.sqrt(summ2)
        rsn = 1.0 / math.sqrt(n)
        a1 = _poly(_C1, rsn) - m[0] / ssumm2
        if n > 5:
            a2 = -m[1] / ssumm2 + _poly(_C2, rsn)
            fac = math.sqrt((summ2 - 2 * m[0] ** 2 - 2 * m[1] ** 2) / (1 - 2 * a1**2 - 2 * a2**2))
            a[1] = a2
            first = 2
        else:
            fac = math.sqrt((summ2 - 2 * m[0] ** 2) / (1 - 2 * a1**2))
            first = 1
        a[0] = a1
        a[first:] = -m[first:] / fac
    w = np.zeros(n)
    w[:half] = -a
    w[n - half :] = a[::-1]
    return w


def shapiro_wilk(sample: Sequence[float], alpha: float = ALPHA) -> TestResult:
    x = np.sort(np.asarray(sample, dtype=np.float64))
    n = x.size
    if not 3 <= n <= 5000:
        raise InputError(f"Shapiro-Wilk is defined for 3 <= n <= 5000, got n = {n}")
    if not np.isfinite(x).all():
        raise InputError("sample contains NaN or Inf")
    if x[0] == x[-1]:
        raise DegenerateSampleError("Shapiro-Wilk is undefined for a constant sample")
    centred = x - x.mean()
    ss = float(centred @ centred)
    w = min(float(shapiro_weights(n) @ centred) ** 2 / ss, 1.0)
    return TestResult(w, _shapiro_p(w, n), "shapiro-wilk", alpha)


def _shapiro_p(w: float, n: int) -> float:
    if n == 3:
        return min(1.0, max(0.0, 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.pi / 3.0)))
    if w >= 1.0:
        return 1.0
    y = math.log(1.0 - w)
    if n <= 11:
        gamma = _poly(_G, n)
        if y >= gamma:
            return 1e-99
        y = -math.log(gamma - y)
        mean = _poly(_C3, n)
        sd = math.exp(_poly(_C4, n))
    else:
        ln = math.log(n)
        mean = _poly(_C5, ln)
        sd = math.exp(_poly(_C6, ln))
    return _upper_tail((y - mean) / sd)


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties given the mean of the ranks they span."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(values.size)
    start = 0
    while start < values.size:
        stop = start
        while stop + 1 < values.size and sorted_vals[stop + 1] == sorted_vals[start]:
            stop += 1
        ranks[order[start : stop + 1]] = (start + stop) / 2.0 + 1.0
        start = stop + 1
    return ranks


@lru_cache(maxsize=None)
def u_distribution(n1: int, n2: int) -> tuple[int, ...]:
    """Number of group assignments giving each U = 0..n1*n2 (no ties)."""
    # f(n1, n2, u) = f(n1 - 1, n2, u - n2) + f(n1, n2 - 1, u): the largest
    # value is either in the first group (adds n2 to U) or in the second.
    if n1 == 0 or n2 == 0:
        return (1,)
    top = n1 * n2
    out = [0] * (top + 1)
    for u, c in enumerate(u_distribution(n1 - 1, n2)):
        out[u + n2] += c
    for u, c in enumerate(u_distribution(n1, n2 - 1)):
        out[u] += c
    return tuple(out)


def mann_whitney_u(
    a: Sequence[float], b: Sequence[float], alpha: float = ALPHA, exact_max_n: int = EXACT_MAX_N
) -> TestResult:
    """Two-sided test; ``statistic`` is U for ``a``."""
    xa = np.asarray(a, dtype=np.float64).ravel()
    xb = np.asarray(b, dtype=np.float64).ravel()
    n1, n2 = xa.size, xb.size
    if n1 == 0 or n2 == 0:
        raise InputError("Mann-Whitney needs two non-empty samples")
    pooled = np.concatenate([xa, xb])
    if not np.isfinite(pooled).all():
        raise InputError("samples contain NaN or Inf")
    ranks = midranks(pooled)
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    _, tie_counts = np.unique(pooled, return_counts=True)
    has_ties = bool((tie_counts > 1).any())
    N = n1 + n2
    if N <= exact_max_n and not has_ties:
        dist = u_distribution(n1, n2)
        total = math.comb(N, n1)
        k = int(round(u))
        lower = sum(dist[: k + 1]) / total
        upper = sum(dist[k:]) / total
        return TestResult(u, min(1.0, 2.0 * min(lower, upper)), "mann-whitney-exact", alpha)
    mu = n1 * n2 / 2.0
    tie_term = float(((tie_counts**3) - tie_counts).sum()) / (N * (N - 1))
    var = n1 * n2 / 12.0 * ((N + 1) - tie_term)
    if var <= 0:
        return TestResult(u, 1.0, "mann-whitney-normal", alpha)
    z = max(abs(u - mu) - 0.5, 0.0) / math.sqrt(var)
    return TestResult(u, min(1.0, 2.0 * _upper_tail(z)), "mann-whitney-normal", alpha)


def enumerate_u_pvalue(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sided exact p by listing every split of the pooled sample.

    Exponential in the sample sizes; meant for cross-checking small cases.
    """
    pooled = list(a) + list(b)
    n1 = len(a)
    ranks = midranks(np.asarray(pooled, dtype=np.float64))
    offset = n1 * (n1 + 1) / 2.0
    observed = float(ranks[:n1].sum() - offset)
    us = [float(ranks[list(idx)].sum() - offset) for idx in combinations(range(len(pooled)), n1)]
    lower = sum(u <= observed for u in us) / len(us)
    upper = sum(u >= observed for u in us) / len(us)
    return min(1.0, 2.0 * min(lower, upper))


def holm(results: Sequence[TestResult]) -> list[TestResult]:
    """Holm step-down adjustment of a family of p-values."""
    m = len(results)
    order = sorted(range(m), key=lambda i: results[i].p_value)
    adjusted = [0.0] * m
    running = 0.0
    for rank, i in enumerate(order):
        running = max(running, min(1.0, (m - rank) * results[i].p_value))
        adjusted[i] = running
    return [
        TestResult(r.statistic, p, r.method, r.alpha, "holm") for r, p in zip(results, adjusted)
    ]


@dataclass(frozen=True)
class SignificanceMatrix:
    models: tuple
    normality: dict  # model -> TestResult, or None for a constant vector
    pairs: dict  # (model_a, model_b) -> TestResult, a before b in ``models``
    correction: str = "none"
    exact_max_n: int = EXACT_MAX_N
    notes: tuple = field(default=())

    @property
    def all_normal(self) -> bool:
        return all(r is not None and not r.reject for r in self.normality.values())

    def result(self, a: str, b: str) -> TestResult:
        return self.pairs[(a, b)] if (a, b) in self.pairs else self.pairs[(b, a)]


def pairwise_significance(
    kappas: Mapping[str, Sequence[float]],
    alpha: float = ALPHA,
    correction: str = "none",
    exact_max_n: int = EXACT_MAX_N,
) -> SignificanceMatrix:
    """Shapiro-Wilk per vector and Mann-Whitney for every unordered pair.

    The rank test runs regardless of the normality outcome; both are kept.
    """
    if correction not in ("none", "holm"):
        raise InputError(f"unknown correction {correction!r}")
    models = tuple(kappas)
    lengths = {len(v) for v in kappas.values()}
    if len(lengths) > 1:
        raise InputError(f"kappa vectors have different lengths: {sorted(lengths)}")
    normality = {}
    notes = []
    for name in models:
        try:
            normality[name] = shapiro_wilk(kappas[name], alpha)
        except DegenerateSampleError:
            normality[name] = None
            notes.append(f"{name}: constant kappa vector, normality test skipped")
        except InputError:
            normality[name] = None
            notes.append(f"{name}: {len(kappas[name])} values, normality test needs at least 3")
    keys = list(combinations(models, 2))
    results = [mann_whitney_u(kappas[a], kappas[b], alpha, exact_max_n) for a, b in keys]
    if correction == "holm" and results:
        results = holm(results)
    return SignificanceMatrix(models, normality, dict(zip(keys, results)), correction, exact_max_n, tuple(notes))
