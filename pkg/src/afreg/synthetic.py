"""Seeded synthetic forward-rate panels with known generating parameters."""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass

import numpy as np

from .basis import NsBasisSpec, basis_matrix
from .dynamics import OuParams, simulate
from .market_data import CurvePanel, business_dates
from .regularization import LinearFlowModel

DEFAULT_MATURITIES = (1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 20.0, 30.0)
DEFAULT_START = _dt.date(2000, 1, 3)


@dataclass
class SyntheticPanel:
    panel: CurvePanel
    betas: np.ndarray
    spread: np.ndarray
    ou: OuParams
    spec: NsBasisSpec


def _streams(seed):
    return np.random.SeedSequence(seed).spawn(2)


def ns_panel(
    spec: NsBasisSpec,
    ou: OuParams,
    n_days: int,
    noise_sd: float = 1e-4,
    seed: int = 0,
    maturities=DEFAULT_MATURITIES,
    dt: float = 1.0 / 252.0,
    start: _dt.date = DEFAULT_START,
) -> SyntheticPanel:
    """Plain factor-model panel: OU factors, Nelson-Siegel loadings, iid Gaussian noise."""
    path_seed, noise_seed = _streams(seed)
    betas = simulate(ou, ou.K, dt, n_days - 1, path_seed)
    X = basis_matrix(spec, maturities)
    rng = np.random.default_rng(noise_seed)
    rates = betas @ X.T + noise_sd * rng.standard_normal((n_days, len(maturities)))
    panel = CurvePanel(business_dates(start, n_days), maturities, rates)
    return SyntheticPanel(panel, betas, np.zeros_like(rates), ou, spec)


def afns_panel(
    spec: NsBasisSpec,
    ou: OuParams,
    n_days: int,
    noise_sd: float = 1e-4,
    seed: int = 0,
    maturities=DEFAULT_MATURITIES,
    dt: float = 1.0 / 252.0,
    start: _dt.date = DEFAULT_START,
    vol_form: str = "covariation",
) -> SyntheticPanel:
    """Arbitrage-consistent panel: the spread obeys the drift restriction along the factor path.

    The spread starts at zero and accumulates
    ``C_s = C_{s-1} - [phi(T) . A(K - beta_{s-1}) + vol(T)] dt``.
    """
    path_seed, noise_seed = _streams(seed)
    betas = simulate(ou, ou.K, dt, n_days - 1, path_seed)
    model = LinearFlowModel(spec, ou, vol_form)
    X = basis_matrix(spec, maturities)
    vol = model.vol_term(maturities)
    drift = (ou.K - betas) @ ou.A.T @ X.T
    spread = np.zeros((n_days, len(maturities)))
    spread[1:] = -np.cumsum((drift[:-1] + vol) * dt, axis=0)
    rng = np.random.default_rng(noise_seed)
    rates = betas @ X.T + spread + noise_sd * rng.standard_normal((n_days, len(maturities)))
    panel = CurvePanel(business_dates(start, n_days), maturities, rates)
    return SyntheticPanel(panel, betas, spread, ou, spec)


def default_afns_setup(n_factors: int = 3, tau: float = 1.5) -> tuple:
    """Moderately persistent factors with volatilities large enough for a visible convexity drift."""
    spec = NsBasisSpec(n_factors, tau)
    a = np.concatenate([[0.3, 0.5, 0.8], np.linspace(1.0, 2.0, n_factors - 3)])
    K = np.concatenate([[0.05, -0.01, 0.0], np.zeros(n_factors - 3)])
    sigma = np.concatenate([[0.012, 0.015, 0.02], np.full(n_factors - 3, 0.01)])
    return spec, OuParams.diagonal(a, K, sigma)
