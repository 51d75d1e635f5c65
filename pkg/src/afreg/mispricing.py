"""Irrational over/under-pricing labels, pair states and mispricing frequencies."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyHistory, EmptyInput, MisalignedHistory
from .stats import wilson_interval

BP = 1e-4


class MispricingLabel(enum.Enum):
    UNDERPRICED = "underpriced"
    OVERPRICED = "overpriced"
    RATIONAL = "rational"


class PairState(enum.Enum):
    A_GREATER_B = "a>b"
    A_LESS_B = "a<b"
    NEUTRAL = "neutral"


# symbol index used by the HMM
PAIR_STATES = (PairState.A_GREATER_B, PairState.A_LESS_B, PairState.NEUTRAL)
STATE_INDEX = {s: i for i, s in enumerate(PAIR_STATES)}


@dataclass(frozen=True)
class MispricingThresholds:
    """``epsilon`` in basis points of forward rate, ``delta`` a plain ratio margin."""

    epsilon: float
    delta: float

    def __post_init__(self):
        if self.epsilon < 0 or self.delta < 0:
            raise ValueError("thresholds must be non-negative")


PRESET_THRESHOLDS = (
    MispricingThresholds(0.1, 0.0),
    MispricingThresholds(1.0, 0.1),
    MispricingThresholds(2.0, 0.8),
)


@dataclass(frozen=True, eq=False)
class ErrorPanel:
    """Model-minus-observed errors, one row per past date, one column per maturity."""

    errors: np.ndarray
    maturities: tuple

    def __post_init__(self):
        e = np.atleast_2d(np.asarray(self.errors, dtype=float))
        if e.size == 0:
            e = e.reshape(0, len(self.maturities))
        object.__setattr__(self, "errors", e)
        object.__setattr__(self, "maturities", tuple(float(m) for m in self.maturities))
        if e.shape[1] != len(self.maturities):
            raise MisalignedHistory("error columns do not match maturities")

    def column(self, T: float) -> int:
        try:
            return self.maturities.index(float(T))
        except ValueError:
            raise MisalignedHistory(f"maturity {T} not in the error history") from None


def _tail_count(E: np.ndarray, col: int) -> int:
    """Number of (date, maturity) cells whose squared deviation from the pooled mean
    exceeds that of maturity ``col`` on the same date."""
    dev = (E - E.mean()) ** 2
    return int(np.sum(dev > dev[:, [col]]))


def tail_mass_ratio(err_af: ErrorPanel, err_naive: ErrorPanel, T: float) -> float:
    """Naive-model tail count over regularized-model tail count at maturity ``T``.

    A zero denominator gives ``inf`` (or ``nan`` when both counts are zero).
    """
    _check_histories(err_af, err_naive)
    col = err_af.column(T)
    num = _tail_count(err_naive.errors, col)
    den = _tail_count(err_af.errors, col)
    if den == 0:
        return math.inf if num > 0 else math.nan
    return num / den


def _check_histories(err_af: ErrorPanel, err_naive: ErrorPanel) -> None:
    if err_af.errors.shape[0] == 0 or err_naive.errors.shape[0] == 0:
        raise EmptyHistory("error history is empty")
    if err_af.errors.shape != err_naive.errors.shape or err_af.maturities != err_naive.maturities:
        raise MisalignedHistory("error histories are not aligned")


def _label(af_value, naive_value, ratio, thresholds) -> MispricingLabel:
    eps = thresholds.epsilon * BP
    tail = ratio > 1.0 + thresholds.delta  # nan compares False
    if tail and af_value > naive_value + eps:
        return MispricingLabel.UNDERPRICED
    if tail and naive_value > af_value + eps:
        return MispricingLabel.OVERPRICED
    return MispricingLabel.RATIONAL


def classify_point(
    af_value: float,
    naive_value: float,
    err_af_history: ErrorPanel,
    err_naive_history: ErrorPanel,
    T: float,
    thresholds: MispricingThresholds,
) -> MispricingLabel:
    """Label one curve point from the two model values and their past error panels.

    Regularized forward above naive by more than epsilon (and a thinner
    regularized error tail) means the bond is under-priced; the mirror case
    is over-priced.
    """
    ratio = tail_mass_ratio(err_af_history, err_naive_history, T)
    return _label(af_value, naive_value, ratio, thresholds)


_PAIR_TABLE = {
    (MispricingLabel.OVERPRICED, MispricingLabel.RATIONAL): PairState.A_GREATER_B,
    (MispricingLabel.RATIONAL, MispricingLabel.UNDERPRICED): PairState.A_GREATER_B,
    (MispricingLabel.OVERPRICED, MispricingLabel.UNDERPRICED): PairState.A_GREATER_B,
    (MispricingLabel.UNDERPRICED, MispricingLabel.RATIONAL): PairState.A_LESS_B,
    (MispricingLabel.RATIONAL, MispricingLabel.OVERPRICED): PairState.A_LESS_B,
    (MispricingLabel.UNDERPRICED, MispricingLabel.OVERPRICED): PairState.A_LESS_B,
}


def pair_state(label_a: MispricingLabel, label_b: MispricingLabel) -> PairState:
    return _PAIR_TABLE.get((label_a, label_b), PairState.NEUTRAL)


def label_panel(observed, af_outputs, naive_outputs, maturities, thresholds: MispricingThresholds, warmup: int = 0) -> list:
    """Labels for every date ``k >= warmup`` and every maturity.

    The error histories at date ``k`` use all rows up to and including ``k``.
    Returns a list (one entry per labelled date) of label lists.
    """
    F = np.atleast_2d(np.asarray(observed, dtype=float))
    A = np.atleast_2d(np.asarray(af_outputs, dtype=float))
    N = np.atleast_2d(np.asarray(naive_outputs, dtype=float))
    if not (F.shape == A.shape == N.shape) or F.shape[1] != len(maturities):
        raise MisalignedHistory("observed and model outputs must share one shape")
    if warmup >= F.shape[0]:
        raise EmptyHistory(f"no dates left after a warmup of {warmup}")
    err_a = A - F
    err_n = N - F
    out = []
    for k in range(warmup, F.shape[0]):
        ea, en = err_a[: k + 1], err_n[: k + 1]
        da = (ea - ea.mean()) ** 2
        dn = (en - en.mean()) ** 2
        row = []
        for j in range(F.shape[1]):
            num = int(np.sum(dn > dn[:, [j]]))
            den = int(np.sum(da > da[:, [j]]))
            ratio = (math.inf if num > 0 else math.nan) if den == 0 else num / den
            row.append(_label(A[k, j], N[k, j], ratio, thresholds))
        out.append(row)
    return out


def state_sequence(observed, af_outputs, naive_outputs, maturities, pair, thresholds: MispricingThresholds, warmup: int = 0) -> list:
    """Pair state per date after ``warmup`` for the ordered maturity pair ``(T_a, T_b)``."""
    mats = [float(m) for m in maturities]
    try:
        ia, ib = mats.index(float(pair[0])), mats.index(float(pair[1]))
    except ValueError:
        raise MisalignedHistory(f"pair {pair} not on the maturity grid") from None
    labels = label_panel(observed, af_outputs, naive_outputs, mats, thresholds, warmup)
    return [pair_state(row[ia], row[ib]) for row in labels]


def estimate_pi(labels: Sequence[MispricingLabel], confidence: float = 0.999) -> tuple:
    """(pi_hat, sd, wilson_lo, wilson_hi) for the share of non-rational labels."""
    n = len(labels)
    if n == 0:
        raise EmptyInput("no labels")
    x = sum(1 for lab in labels if lab is not MispricingLabel.RATIONAL)
    p = x / n
    lo, hi = wilson_interval(x, n, confidence)
    return p, math.sqrt(p * (1.0 - p) / n), lo, hi
