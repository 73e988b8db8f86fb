"""Evaluation metrics and statistical checks for the privacy claims."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike

from .errors import DomainError, ShapeError, UndefinedMetricError

# Asymptotic Kolmogorov distribution quantile at 1 - alpha = 0.99.
KS_CRITICAL_COEFF_01 = 1.63

# Chi-square upper 1% point for 15 degrees of freedom (16 bins).
CHI2_CRITICAL_DF15_01 = 30.578


def cosine_similarity(a: ArrayLike, b: ArrayLike) -> float:
    """``dot(a, b) / (|a| |b|)`` over the full flat vectors, in float64."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ShapeError(f"length mismatch: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise UndefinedMetricError("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def ks_uniform_statistic(samples: ArrayLike) -> float:
    """Kolmogorov-Smirnov distance between the empirical CDF and U[0, 1).

    ``D = max_i max(i/n - x_(i), x_(i) - (i-1)/n)`` over the sorted sample.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64).reshape(-1))
    n = x.size
    if n == 0:
        raise DomainError("KS statistic of an empty sample is undefined")
    if x[0] < 0.0 or x[-1] >= 1.0:
        raise DomainError("KS uniformity samples must lie in [0, 1)")
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - x), np.max(x - (i - 1) / n)))


def ks_critical_value(n: int, coeff: float = KS_CRITICAL_COEFF_01) -> float:
    return coeff / math.sqrt(n)


def ks_uniform_passes(samples: ArrayLike) -> bool:
    """True when the sample is consistent with uniformity at alpha = 0.01.

    The asymptotic critical value is only meaningful for n >= 10.
    """
    x = np.asarray(samples).reshape(-1)
    if x.size < 10:
        raise DomainError(f"KS test needs at least 10 samples, got {x.size}")
    return ks_uniform_statistic(x) < ks_critical_value(x.size)


def chi_square_uniform(values: ArrayLike, upper: int, bins: int = 16) -> float:
    """Pearson chi-square statistic for integers uniform on ``[0, upper)``, equal-width bins."""
    v = np.asarray(values, dtype=np.int64).reshape(-1)
    if v.size == 0:
        raise DomainError("no samples")
    if v.min() < 0 or v.max() >= upper:
        raise DomainError(f"values must lie in [0, {upper})")
    edges = np.linspace(0, upper, bins + 1)
    observed, _ = np.histogram(v, bins=edges)
    expected = v.size * np.diff(edges) / upper
    return float(np.sum((observed - expected) ** 2 / expected))


def pearson_correlation(x: ArrayLike, y: ArrayLike) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise ShapeError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 3:
        raise DomainError("correlation needs at least 3 pairs")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(np.dot(dx, dx)), math.sqrt(np.dot(dy, dy))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedMetricError("correlation undefined for zero variance")
    return float(np.clip(np.dot(dx, dy) / (sx * sy), -1.0, 1.0))


def accuracy(predictions: ArrayLike, labels: ArrayLike) -> float:
    predictions = np.asarray(predictions).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if predictions.size != labels.size:
        raise ShapeError("one prediction per label required")
    if labels.size == 0:
        raise DomainError("accuracy of an empty set is undefined")
    return float(np.mean(predictions == labels))


@dataclass(frozen=True)
class MetricReport:
    """Mean and population standard deviation over independent runs."""

    mean: float
    std: float
    count: int
    values: Tuple[float, ...]

    def __str__(self) -> str:
        return f"{self.mean:.3f} ± {self.std:.3f} (n={self.count})"


def summarize(runs: Sequence[float]) -> MetricReport:
    values = tuple(float(v) for v in runs)
    if not values:
        raise DomainError("summarize() needs at least one value")
    arr = np.array(values)
    return MetricReport(float(arr.mean()), float(arr.std(ddof=0)), len(values), values)
