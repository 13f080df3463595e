"""Rank tests, multiple-comparison correction and box-plot summaries."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class MannWhitneyResult:
    u: float
    u_other: float
    p: float


def midranks(values) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def u_statistics(a, b) -> tuple[float, float]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ranks = midranks(np.concatenate([a, b]))
    n_a, n_b = len(a), len(b)
    u_a = ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0
    return u_a, n_a * n_b - u_a


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _tie_term(pooled: np.ndarray) -> float:
    _, counts = np.unique(pooled, return_counts=True)
    return float(np.sum(counts.astype(np.float64) ** 3 - counts))


def mann_whitney_u(a: Sequence[float], b: Sequence[float], method: str = "normal") -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test of ``a`` against ``b``.

    ``method="normal"`` uses the tie-corrected normal approximation with
    continuity correction; ``method="exact"`` enumerates every assignment of
    the pooled midranks to the two groups.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 1 or len(b) < 1:
        raise ValueError("both samples need at least one observation")
    u_a, u_b = u_statistics(a, b)
    if method == "exact":
        return MannWhitneyResult(u_a, u_b, exact_p(a, b))
    if method != "normal":
        raise ValueError(f"unknown method {method!r}")
    n_a, n_b = len(a), len(b)
    n = n_a + n_b
    pooled = np.concatenate([a, b])
    var = n_a * n_b / 12.0 * ((n + 1) - _tie_term(pooled) / (n * (n - 1))) if n > 1 else 0.0
    if var <= 0:
        return MannWhitneyResult(u_a, u_b, 1.0)
    dev = abs(u_a - n_a * n_b / 2.0)
    z = max(dev - 0.5, 0.0) / math.sqrt(var)
    return MannWhitneyResult(u_a, u_b, min(1.0, 2.0 * _normal_sf(z)))


def exact_p(a, b) -> float:
    """Two-sided permutation p-value of U conditional on the tie pattern."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n_a, n_b = len(a), len(b)
    if n_a + n_b > 20:
        raise ValueError("exact enumeration is limited to 20 pooled observations")
    ranks = midranks(np.concatenate([a, b]))
    centre = n_a * n_b / 2.0
    offset = n_a * (n_a + 1) / 2.0
    observed = abs(ranks[:n_a].sum() - offset - centre)
    hits = total = 0
    for combo in itertools.combinations(range(n_a + n_b), n_a):
        u = ranks[list(combo)].sum() - offset
        total += 1
        # small tolerance: midranks are multiples of 0.5, sums are exact
        if abs(u - centre) >= observed - 1e-9:
            hits += 1
    return hits / total


def bonferroni(pvals: Sequence[float], m: int | None = None) -> list[float]:
    """``min(1, m * p)`` for each p-value; ``m`` defaults to ``len(pvals)``."""
    pvals = [float(p) for p in pvals]
    m = len(pvals) if m is None else int(m)
    if m < len(pvals):
        raise ValueError(f"m={m} is smaller than the {len(pvals)} p-values given")
    for p in pvals:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p-value {p} outside [0, 1]")
    return [min(1.0, m * p) for p in pvals]


@dataclass(frozen=True)
class BoxStats:
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: tuple[float, ...]

    @classmethod
    def of(cls, values) -> "BoxStats":
        v = np.sort(np.asarray(values, dtype=np.float64))
        if v.size == 0:
            raise ValueError("cannot summarize an empty sample")
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        iqr = q3 - q1
        lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        inside = v[(v >= lo_fence) & (v <= hi_fence)]
        outliers = tuple(float(x) for x in v[(v < lo_fence) | (v > hi_fence)])
        return cls(float(med), float(q1), float(q3), float(inside.min()), float(inside.max()), outliers)


@dataclass(frozen=True)
class Comparison:
    group: str
    a: str
    b: str
    u: float
    p_raw: float
    p_adjusted: float
    m: int


def compare_group(group: str, accuracies: dict[str, Sequence[float]],
                  pairs: Sequence[tuple[str, str]] | None = None, m: int | None = None) -> list[Comparison]:
    """Pairwise two-sided tests within one group, Bonferroni-adjusted.

    Default pairs are all unordered pairs in insertion order and ``m`` is
    their number.
    """
    names = list(accuracies)
    pairs = list(itertools.combinations(names, 2)) if pairs is None else list(pairs)
    if not pairs:
        return []
    m = len(pairs) if m is None else m
    tests = [mann_whitney_u(accuracies[a], accuracies[b]) for a, b in pairs]
    adjusted = bonferroni([t.p for t in tests], m)
    return [Comparison(group, a, b, t.u, t.p, adj, m) for (a, b), t, adj in zip(pairs, tests, adjusted)]
