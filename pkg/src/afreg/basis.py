"""Extended Nelson-Siegel loadings, curve evaluation, bond prices, cross-section fits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import (
    DimensionMismatch,
    MaturityBeforeValuation,
    NonPositiveMaturity,
    RankDeficient,
    TooFewObservations,
)

_SERIES_CUTOFF = 1e-6


def default_exponents(n_factors: int) -> tuple:
    """Decay exponents k_i = 1 + (i - 3)/2 for the loadings beyond the third."""
    return tuple(1.0 + (i - 3) / 2.0 for i in range(4, n_factors + 1))


@dataclass(frozen=True)
class NsBasisSpec:
    n_factors: int = 3
    tau: float = 1.0
    exponents: Optional[tuple] = None

    def __post_init__(self):
        if self.n_factors < 3:
            raise ValueError("the Nelson-Siegel basis needs at least 3 factors")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        exps = default_exponents(self.n_factors) if self.exponents is None else tuple(
            float(k) for k in self.exponents
        )
        if len(exps) != self.n_factors - 3:
            raise ValueError(
                f"{self.n_factors} factors need {self.n_factors - 3} exponents, got {len(exps)}"
            )
        if any(not k > 0 for k in exps):
            raise ValueError("exponents must be positive")
        object.__setattr__(self, "exponents", exps)

    def to_dict(self) -> dict:
        return {"n_factors": self.n_factors, "tau": self.tau, "exponents": list(self.exponents)}

    @classmethod
    def from_dict(cls, d: dict) -> "NsBasisSpec":
        exps = d.get("exponents")
        return cls(int(d["n_factors"]), float(d["tau"]), None if exps is None else tuple(exps))


@dataclass(frozen=True)
class FactorState:
    beta: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        b = np.array(self.beta, dtype=float).reshape(-1)
        b.setflags(write=False)
        object.__setattr__(self, "beta", b)


def _one_minus_exp_over(x: np.ndarray) -> np.ndarray:
    """(1 - e^-x)/x with the series branch for small x."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < _SERIES_CUTOFF
    xs = x[small]
    out[small] = 1.0 - xs / 2.0 + xs * xs / 6.0
    xl = x[~small]
    out[~small] = -np.expm1(-xl) / xl
    return out


def basis_matrix(spec: NsBasisSpec, maturities) -> np.ndarray:
    """Loadings at each maturity, shape ``(len(maturities), n_factors)``."""
    T = np.atleast_1d(np.asarray(maturities, dtype=float))
    if np.any(T < 0):
        raise NonPositiveMaturity("maturities must be non-negative")
    x = T / spec.tau
    phi2 = _one_minus_exp_over(x)
    cols = [np.ones_like(T), phi2, phi2 - np.exp(-x)]
    for k in spec.exponents:
        cols.append(_one_minus_exp_over(T**k / spec.tau))
    return np.column_stack(cols)


def basis_eval(spec: NsBasisSpec, T: float) -> np.ndarray:
    """Loadings (phi_1(T), ..., phi_N(T)); T = 0 uses the analytic limit."""
    if T < 0:
        raise NonPositiveMaturity(f"maturity {T} < 0")
    return basis_matrix(spec, [T])[0]


def _beta(state) -> np.ndarray:
    return np.asarray(getattr(state, "beta", state), dtype=float).reshape(-1)


def curve_eval(spec: NsBasisSpec, state, T):
    """Forward rate sum_i beta_i phi_i(T); scalar T gives a float."""
    beta = _beta(state)
    if beta.shape[0] != spec.n_factors:
        raise DimensionMismatch(f"beta has {beta.shape[0]} entries, basis has {spec.n_factors}")
    vals = basis_matrix(spec, T) @ beta
    return float(vals[0]) if np.ndim(T) == 0 else vals


def bond_price(
    spec: NsBasisSpec,
    state,
    t: float,
    T: float,
    spread: Optional[Callable[[float], float]] = None,
) -> float:
    """Zero-coupon price exp(-int_t^T f(t, s) ds).

    The curve is a function of time-to-maturity, so the integral runs over
    ``x = s - t`` in ``[0, T - t]``. ``spread`` (if given) is added to the
    curve and is likewise a function of time-to-maturity.
    """
    if T < t:
        raise MaturityBeforeValuation(f"maturity {T} before valuation time {t}")
    if T == t:
        return 1.0
    beta = _beta(state)
    if spread is None:
        integrand = lambda x: curve_eval(spec, beta, x)
    else:
        integrand = lambda x: curve_eval(spec, beta, x) + spread(x)
    val, _ = integrate.quad(integrand, 0.0, T - t, epsabs=1e-10, epsrel=1e-12, limit=200)
    return float(np.exp(-val))


def fit_cross_section(
    spec: NsBasisSpec,
    maturities,
    observed,
    allow_underdetermined: bool = False,
) -> FactorState:
    """Least-squares factors for one observed curve.

    With ``allow_underdetermined`` the minimum-norm solution is returned
    when there are fewer maturities than factors instead of raising.
    """
    X = basis_matrix(spec, maturities)
    y = np.asarray(observed, dtype=float).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise DimensionMismatch("observed values do not match maturities")
    if not allow_underdetermined:
        if X.shape[0] < spec.n_factors:
            raise TooFewObservations(
                f"{X.shape[0]} observations for {spec.n_factors} factors"
            )
        if np.linalg.matrix_rank(X) < spec.n_factors:
            raise RankDeficient("design matrix is not full column rank")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return FactorState(beta)


def fit_panel_rows(spec: NsBasisSpec, maturities, rates, allow_underdetermined=False) -> np.ndarray:
    """Row-by-row :func:`fit_cross_section` for a whole rate matrix."""
    X = basis_matrix(spec, maturities)
    Y = np.atleast_2d(np.asarray(rates, dtype=float))
    if not allow_underdetermined:
        if X.shape[0] < spec.n_factors:
            raise TooFewObservations(f"{X.shape[0]} observations for {spec.n_factors} factors")
        if np.linalg.matrix_rank(X) < spec.n_factors:
            raise RankDeficient("design matrix is not full column rank")
    B, *_ = np.linalg.lstsq(X, Y.T, rcond=None)
    return B.T
