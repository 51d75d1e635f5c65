"""Arbitrage-free regularization of Nelson-Siegel forward-curve models."""

__version__ = "0.1.0"

from .basis import FactorState, NsBasisSpec, basis_eval, bond_price, curve_eval, fit_cross_section
from .dynamics import DiscreteOu, OuParams, exact_discretization, mle_fit, simulate
from .estimator import (
    AfEstimatorConfig,
    af_estimate_step,
    cross_validate,
    optimize_alpha,
    run_bimonthly_estimate,
    run_daily_forecast,
)
from .market_data import CurvePanel, PanelSchema, load_panel, to_forward_rates, window
from .regularization import (
    AfCurve,
    LinearFlowModel,
    arbitrage_penalty,
    drift_residual,
    model_deviation,
    optimal_spread,
)
from .state_space import StatePath, StateSpaceModel, fit_pipeline, kalman_filter, kalman_smoother
