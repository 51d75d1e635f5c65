"""Runs test, Wilson score interval, AIC and the Gaussian error likelihood."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .errors import Degenerate, InvalidCounts, TooFew


@dataclass(frozen=True)
class RunsTestResult:
    runs: int
    n1: int
    n2: int
    z: float
    p_value: float


def count_runs(seq: Sequence) -> int:
    """Number of maximal blocks of equal consecutive labels."""
    if len(seq) == 0:
        return 0
    return 1 + sum(1 for a, b in zip(seq[:-1], seq[1:]) if a != b)


def runs_test(seq: Sequence) -> RunsTestResult:
    """Two-sided Wald-Wolfowitz runs test, normal approximation without continuity correction.

    The first label seen is counted as ``n1``.
    """
    seq = list(seq)
    labels = list(dict.fromkeys(seq))
    if len(labels) != 2:
        raise Degenerate(f"runs test needs exactly two labels, got {len(labels)}")
    n1 = sum(1 for s in seq if s == labels[0])
    n2 = len(seq) - n1
    runs = count_runs(seq)
    n = n1 + n2
    mean = 1.0 + 2.0 * n1 * n2 / n
    var = 2.0 * n1 * n2 * (2.0 * n1 * n2 - n) / (n * n * (n - 1))
    if var <= 0:
        # n1 = n2 = 1: the run count is fixed at 2
        return RunsTestResult(runs, n1, n2, 0.0, 1.0)
    z = (runs - mean) / math.sqrt(var)
    p = float(min(1.0, 2.0 * norm.sf(abs(z))))
    return RunsTestResult(runs, n1, n2, float(z), p)


def normal_quantile(confidence: float) -> float:
    """Two-sided standard-normal critical value for ``confidence``."""
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    return float(norm.ppf(0.5 + confidence / 2.0))


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple:
    """Wilson score interval for a binomial proportion."""
    if n < 1 or successes < 0 or successes > n or int(successes) != successes or int(n) != n:
        raise InvalidCounts(f"invalid counts successes={successes}, n={n}")
    z = normal_quantile(confidence)
    p = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    centre = (p + z2 / (2.0 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return lo, hi


def aic(loglik: float, k: int) -> float:
    if k < 0:
        raise ValueError("parameter count must be non-negative")
    return 2.0 * k - 2.0 * loglik


def gaussian_loglik(errors) -> tuple:
    """Zero-mean Gaussian log-likelihood at the MLE variance; returns ``(loglik, 1)``."""
    e = np.asarray(errors, dtype=float).reshape(-1)
    if e.size < 2:
        raise TooFew("need at least two errors")
    s2 = float(np.mean(e * e))
    if not s2 > 0:
        raise Degenerate("all errors are zero")
    n = e.size
    return -0.5 * n * (math.log(2.0 * math.pi * s2) + 1.0), 1
