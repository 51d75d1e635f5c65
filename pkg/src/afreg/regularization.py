"""Drift restriction for linear factor curves and the closed-form arbitrage-removing spread.

For a curve f(t, T) = phi(T) . beta_t + C(t, T) with OU factors
d beta = A(K - beta) dt + Sigma dW, bond prices are local martingales iff

    dC/dt + phi(T) . A(K - beta) + vol(T) = 0,

where vol(T) = 1/2 phi(T)^T Sigma Sigma^T phi(T) is half the instantaneous
variance of the curve point. Holding beta fixed and integrating in t from
0 gives the spread C(t, T; beta) = -t [phi(T) . A(K - beta) + vol(T)].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .basis import FactorState, NsBasisSpec, basis_matrix
from .dynamics import OuParams
from .errors import DimensionMismatch, EmptyGrid

VOL_FORMS = ("covariation", "squared_sum")


@dataclass(frozen=True, eq=False)
class LinearFlowModel:
    """Nelson-Siegel loadings driven by OU factors on flat (Euclidean) factor space.

    ``vol_form`` selects the volatility term of the drift restriction:
    ``"covariation"`` is 1/2 sum_i phi_i^2 sigma_i^2 (independent shocks),
    ``"squared_sum"`` is 1/2 (sum_i phi_i sigma_i)^2 (one common shock).
    The two coincide for a single factor.
    """

    spec: NsBasisSpec
    ou: OuParams
    vol_form: str = "covariation"

    def __post_init__(self):
        if self.ou.dim != self.spec.n_factors:
            raise DimensionMismatch(
                f"OU has {self.ou.dim} factors, basis has {self.spec.n_factors}"
            )
        if self.vol_form not in VOL_FORMS:
            raise ValueError(f"unknown vol_form {self.vol_form!r}")

    @property
    def dim(self) -> int:
        return self.spec.n_factors

    def loadings(self, T) -> np.ndarray:
        return basis_matrix(self.spec, T)

    def drift_term(self, beta, T) -> np.ndarray:
        """phi(T) . A(K - beta) at each maturity."""
        return self.loadings(T) @ self.ou.drift(_vec(beta, self.dim))

    def vol_term(self, T) -> np.ndarray:
        X = self.loadings(T)
        if self.vol_form == "covariation":
            return 0.5 * (X**2) @ (self.ou.sigma**2)
        return 0.5 * (X @ self.ou.sigma) ** 2

    def spread_integrand(self, beta, T) -> np.ndarray:
        return self.drift_term(beta, T) + self.vol_term(T)


def _vec(beta, d) -> np.ndarray:
    b = np.asarray(getattr(beta, "beta", beta), dtype=float).reshape(-1)
    if b.shape[0] != d:
        raise DimensionMismatch(f"beta has {b.shape[0]} entries, model has {d}")
    return b


def _out(vals, T):
    return float(vals[0]) if np.ndim(T) == 0 else vals


def drift_residual(model: LinearFlowModel, beta, t: float, T, spread_time_derivative=0.0):
    """Pointwise drift-restriction integrand; zero iff locally arbitrage-consistent.

    The static basis has no time dependence, so the only time-derivative
    contribution is that of the spread. ``t`` is accepted for symmetry with
    the spread functions; the OU drift does not depend on it.
    """
    vals = np.asarray(spread_time_derivative, dtype=float) + model.spread_integrand(beta, T)
    return _out(np.atleast_1d(vals), T)


def optimal_spread(model: LinearFlowModel, beta, t: float, T):
    """Frozen-factor spread -t [phi(T) . A(K - beta) + vol(T)]."""
    if t < 0:
        raise ValueError("valuation time must be non-negative")
    return _out(-t * model.spread_integrand(beta, T), T)


def optimal_spread_time_derivative(model: LinearFlowModel, beta, T):
    """d/dt of :func:`optimal_spread` at fixed factors."""
    return _out(-model.spread_integrand(beta, T), T)


@dataclass(frozen=True, eq=False)
class AfCurve:
    """Shifted factors ``base.beta + alpha`` plus the matching closed-form spread.

    ``with_spread=False`` gives the undeformed curve (used for comparisons).
    """

    model: LinearFlowModel
    base: FactorState
    alpha: np.ndarray
    t: float
    with_spread: bool = True

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float).reshape(-1)
        if a.shape[0] != self.model.dim:
            raise DimensionMismatch("alpha dimension does not match the model")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @classmethod
    def naive(cls, model: LinearFlowModel, beta, t: float = 0.0) -> "AfCurve":
        return cls(model, FactorState(beta, t), np.zeros(model.dim), t, with_spread=False)

    @property
    def factors(self) -> np.ndarray:
        return self.base.beta + self.alpha

    def spread(self, t: float, T):
        if not self.with_spread:
            return _out(np.zeros(np.size(T)), T)
        return optimal_spread(self.model, self.factors, t, T)

    def spread_time_derivative(self, T):
        if not self.with_spread:
            return _out(np.zeros(np.size(T)), T)
        return optimal_spread_time_derivative(self.model, self.factors, T)

    def value(self, T, t: Optional[float] = None):
        """Curve value at maturities ``T``, valued at ``t`` (default: the curve's own time)."""
        t = self.t if t is None else t
        vals = self.model.loadings(T) @ self.factors + np.atleast_1d(self.spread(t, T))
        return _out(vals, T)

    __call__ = value


def model_deviation(
    spec: NsBasisSpec,
    curve_a: Callable,
    curve_b: Callable,
    beta_path,
    grid,
    weights=None,
) -> float:
    """Weighted mean squared gap between two curve models along a factor path.

    ``curve_a``/``curve_b`` map ``(beta, maturities)`` to curve values;
    ``weights`` weight the maturity grid (uniform when omitted).
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise EmptyGrid("empty maturity grid")
    path = np.atleast_2d(np.asarray(beta_path, dtype=float))
    if path.size == 0:
        raise EmptyGrid("empty factor path")
    if path.shape[1] != spec.n_factors:
        raise DimensionMismatch("factor path does not match the basis")
    w = np.ones(grid.size) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    if w.shape != grid.shape or np.any(w < 0) or not w.sum() > 0:
        raise ValueError("weights must be nonnegative, one per grid point, with positive sum")
    total = 0.0
    for beta in path:
        diff = np.asarray(curve_a(beta, grid), dtype=float) - np.asarray(curve_b(beta, grid), dtype=float)
        total += float(w @ diff**2)
    return total / (path.shape[0] * w.sum())


def arbitrage_penalty(model: LinearFlowModel, curve: AfCurve, t_grid, T_grid, weights=None) -> float:
    """Weighted sum of squared drift residuals of ``curve`` over ``t_grid x T_grid``.

    ``weights`` may be one weight per maturity or a full
    ``(len(t_grid), len(T_grid))`` array; omitted means unit weights.
    """
    ts = np.atleast_1d(np.asarray(t_grid, dtype=float))
    Ts = np.atleast_1d(np.asarray(T_grid, dtype=float))
    if ts.size == 0 or Ts.size == 0:
        raise EmptyGrid("penalty grids must be nonempty")
    if weights is None:
        W = np.ones((ts.size, Ts.size))
    else:
        W = np.broadcast_to(np.asarray(weights, dtype=float), (ts.size, Ts.size))
    dC = np.atleast_1d(curve.spread_time_derivative(Ts))
    total = 0.0
    for i, t in enumerate(ts):
        r = np.atleast_1d(drift_residual(model, curve.factors, t, Ts, dC))
        total += float(W[i] @ r**2)
    return total
