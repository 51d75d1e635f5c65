"""Arbitrage-free estimation: factor shift plus spread, hyperparameter selection, experiment drivers."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy import linalg, optimize

from .basis import FactorState, NsBasisSpec, basis_matrix
from .errors import Degenerate, InsufficientData, SingularNormalEquations
from .market_data import CurvePanel, slice_rows
from .regularization import AfCurve, LinearFlowModel, optimal_spread
from .state_space import PipelineResult, fit_pipeline, reapply
from .stats import aic, count_runs, gaussian_loglik, runs_test, wilson_interval

log = logging.getLogger(__name__)

SHIFT_SPREAD = "shift_spread"
SPREAD_ONLY = "spread_only"
EMPIRICAL = "empirical"
MODELS = (SHIFT_SPREAD, SPREAD_ONLY, EMPIRICAL)

Z95 = 1.959964
Z99 = 2.575829


@dataclass(frozen=True)
class AfEstimatorConfig:
    """Hyperparameters of the estimator and its experiment drivers.

    ``calibration`` picks how the step-1a factors are set before the shift:
    ``"consistent"`` fits them so that the final regularized curve (shift
    and spread included) is closest to the base estimate's curve;
    ``"plug_in"`` uses the base estimate directly.
    ``step1a`` names the base estimator (``predicted``, ``filtered``,
    ``smoothed``, ``regression``) or is a callable ``(result, index) -> beta``;
    ``None`` means ``predicted`` for daily runs and ``regression`` for
    two-month windows.
    """

    gamma_grid: tuple = (0.5, 0.7, 1.0, 1.5)
    n_factor_grid: tuple = tuple(range(3, 11))
    gamma_default: float = 0.7
    n_default: int = 10
    penalty: str = "l2_squared"
    cv_folds: int = 5
    seed: int = 0
    tau: float = 1.0
    exponents: Optional[tuple] = None
    dt: float = 1.0 / 252.0
    window: int = 42
    warmup: int = 60
    step1a: Union[str, Callable, None] = None
    calibration: str = "consistent"
    vol_form: str = "covariation"
    refine: bool = True
    cv_refine: bool = False
    long_end: float = 5.0
    confidence: float = 0.999

    def __post_init__(self):
        object.__setattr__(self, "gamma_grid", tuple(float(g) for g in self.gamma_grid))
        object.__setattr__(self, "n_factor_grid", tuple(int(n) for n in self.n_factor_grid))
        if not self.gamma_grid or not self.n_factor_grid:
            raise ValueError("grids must be nonempty")
        if any(not 0.5 <= g <= 1.5 for g in self.gamma_grid):
            raise ValueError("gamma grid must lie in [0.5, 1.5]")
        if any(not 3 <= n <= 20 for n in self.n_factor_grid):
            raise ValueError("factor-count grid must lie in [3, 20]")
        if self.gamma_default not in self.gamma_grid or self.n_default not in self.n_factor_grid:
            raise ValueError("defaults must be contained in the grids")
        if self.penalty != "l2_squared":
            raise ValueError("only the squared l2 penalty is supported")
        if self.calibration not in ("consistent", "plug_in"):
            raise ValueError(f"unknown calibration {self.calibration!r}")
        if self.cv_folds < 1 or self.window < 1 or self.warmup < 0:
            raise ValueError("cv_folds and window must be positive, warmup non-negative")

    def basis(self, n_factors: Optional[int] = None) -> NsBasisSpec:
        n = self.n_default if n_factors is None else n_factors
        exps = None
        if self.exponents is not None:
            exps = tuple(self.exponents)[: n - 3]
        return NsBasisSpec(n, self.tau, exps)

    def to_dict(self) -> dict:
        out = {}
        for k in self.__dataclass_fields__:
            v = getattr(self, k)
            if callable(v):
                continue
            out[k] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "AfEstimatorConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for k in ("gamma_grid", "n_factor_grid", "exponents"):
            if known.get(k) is not None:
                known[k] = tuple(known[k])
        return cls(**known)


# ------------------------------------------------------------ spread optimization


def _shift_design(model: LinearFlowModel, maturities, t: float):
    """Spread at beta + alpha is ``c0 + M alpha``; returns ``M = t phi A``."""
    return t * model.loadings(maturities) @ model.ou.A


def alpha_objective(model: LinearFlowModel, beta_hat, maturities, gamma: float, t: float, alpha) -> float:
    c = np.asarray(optimal_spread(model, np.asarray(beta_hat) + alpha, t, np.atleast_1d(maturities)))
    return float(c @ c + gamma * np.dot(alpha, alpha))


def optimize_alpha(
    model: LinearFlowModel,
    beta_hat,
    maturities,
    gamma: float,
    t: float,
    method: str = "closed_form",
) -> np.ndarray:
    """Shift minimizing sum_j C(t, T_j; beta + alpha)^2 + gamma |alpha|^2.

    The spread is affine in the shift, so the default solves the ridge normal
    equations. ``method="bfgs"`` runs a quasi-Newton descent from zero
    instead (kept as an independent check).
    """
    if not gamma > 0:
        raise SingularNormalEquations("gamma must be positive")
    T = np.atleast_1d(np.asarray(maturities, dtype=float))
    beta_hat = np.asarray(beta_hat, dtype=float).reshape(-1)
    d = model.dim
    M = _shift_design(model, T, t)
    c0 = np.asarray(optimal_spread(model, beta_hat, t, T))
    if method == "closed_form":
        G = M.T @ M + gamma * np.eye(d)
        try:
            return -linalg.solve(G, M.T @ c0, assume_a="pos")
        except linalg.LinAlgError:
            raise SingularNormalEquations("normal equations are singular") from None
    if method != "bfgs":
        raise ValueError(f"unknown method {method!r}")

    def fun(a):
        r = c0 + M @ a
        return r @ r + gamma * a @ a, 2.0 * (M.T @ r) + 2.0 * gamma * a

    res = optimize.minimize(fun, np.zeros(d), jac=True, method="BFGS", options={"gtol": 1e-10})
    return res.x


def consistent_factors(model: LinearFlowModel, maturities, target, gamma: float, t: float) -> np.ndarray:
    """Factors whose regularized curve (optimal shift and spread applied) best fits ``target``.

    With alpha(beta) the optimal shift, the regularized curve
    phi (beta + alpha) + C(t; beta + alpha) is affine in beta, so this is a
    linear least-squares problem.
    """
    T = np.atleast_1d(np.asarray(maturities, dtype=float))
    d = model.dim
    H = model.loadings(T)
    M = _shift_design(model, T, t)
    c00 = np.asarray(optimal_spread(model, np.zeros(d), t, T))
    G = M.T @ M + gamma * np.eye(d)
    L = np.eye(d) - linalg.solve(G, M.T @ M, assume_a="pos")
    l0 = -linalg.solve(G, M.T @ c00, assume_a="pos")
    W = (H + M) @ L
    w0 = (H + M) @ l0 + c00
    beta, *_ = np.linalg.lstsq(W, np.asarray(target, dtype=float) - w0, rcond=None)
    return beta


# ------------------------------------------------------------ step 1a estimators


def _predicted(result: PipelineResult, i: int) -> np.ndarray:
    return result.filtered.pred_means[i]


def _filtered(result: PipelineResult, i: int) -> np.ndarray:
    return result.filtered.means[i]


def _smoothed(result: PipelineResult, i: int) -> np.ndarray:
    return result.smoothed.means[i]


def _regression(result: PipelineResult, i: int) -> np.ndarray:
    return result.regression_betas[i]


BASE_ESTIMATORS = {
    "predicted": _predicted,
    "filtered": _filtered,
    "smoothed": _smoothed,
    "regression": _regression,
}


def base_estimate(result: PipelineResult, config: AfEstimatorConfig, t_index: int, estimator=None) -> np.ndarray:
    est = estimator if estimator is not None else config.step1a
    if est is None:
        est = "predicted" if result.mode == "daily" else "regression"
    fn = est if callable(est) else BASE_ESTIMATORS[est]
    return np.asarray(fn(result, t_index), dtype=float)


def flow_model(result: PipelineResult, config: AfEstimatorConfig) -> LinearFlowModel:
    return LinearFlowModel(result.spec, result.ou, config.vol_form)


def af_estimate_step(
    pipeline_output: PipelineResult,
    config: AfEstimatorConfig,
    t_index: int,
    gamma: Optional[float] = None,
    estimator=None,
) -> AfCurve:
    """Base factor estimate, optimal shift, closed-form spread; returns the regularized curve."""
    n = len(pipeline_output.times)
    if not 0 <= t_index < n:
        raise IndexError(f"t_index {t_index} outside [0, {n})")
    gamma = config.gamma_default if gamma is None else gamma
    beta_hat = base_estimate(pipeline_output, config, t_index, estimator)
    t = float(pipeline_output.times[t_index])
    model = flow_model(pipeline_output, config)
    mats = pipeline_output.maturities
    if config.calibration == "consistent":
        beta = consistent_factors(model, mats, model.loadings(mats) @ beta_hat, gamma, t)
    else:
        beta = beta_hat
    alpha = optimize_alpha(model, beta, mats, gamma, t)
    return AfCurve(model, FactorState(beta, t), alpha, t)


def spread_only_curve(pipeline_output: PipelineResult, config: AfEstimatorConfig, t_index: int, estimator=None) -> AfCurve:
    beta_hat = base_estimate(pipeline_output, config, t_index, estimator)
    t = float(pipeline_output.times[t_index])
    model = flow_model(pipeline_output, config)
    return AfCurve(model, FactorState(beta_hat, t), np.zeros(model.dim), t)


def empirical_curve(pipeline_output: PipelineResult, config: AfEstimatorConfig, t_index: int, estimator=None) -> AfCurve:
    beta_hat = base_estimate(pipeline_output, config, t_index, estimator)
    return AfCurve.naive(flow_model(pipeline_output, config), beta_hat, float(pipeline_output.times[t_index]))


# ------------------------------------------------------------ daily forecast


@dataclass
class ForecastRow:
    maturity: float
    model: str
    mean: float
    stdev: float
    ci95_lo: float
    ci95_hi: float
    ci99_lo: float
    ci99_hi: float
    aic: float


REPORT_COLUMNS = ("maturity", "model", "mean", "stdev", "ci95_lo", "ci95_hi", "ci99_lo", "ci99_hi", "aic")


@dataclass
class ForecastReport:
    """Per-maturity error statistics for the three models, plus the raw error series.

    ``errors[model]`` has one row per forecast date (``dates``) and one
    column per maturity; errors are observed minus forecast.
    ``n_params[model]`` is the parameter count used in the AIC.
    """

    rows: list
    errors: dict
    dates: list
    maturities: np.ndarray
    n_params: dict

    def row(self, maturity: float, model: str) -> ForecastRow:
        for r in self.rows:
            if r.maturity == maturity and r.model == model:
                return r
        raise KeyError((maturity, model))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(getattr(r, c)) for c in REPORT_COLUMNS])

    def write_errors_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "model"] + [_fmt(m) for m in self.maturities])
            for m in MODELS:
                for d, e in zip(self.dates, self.errors[m]):
                    w.writerow([d.isoformat(), m] + [_fmt(x) for x in e])


def _fmt(v):
    if isinstance(v, str):
        return v
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def error_statistics(errors, maturity: float, model: str, k: int) -> ForecastRow:
    e = np.asarray(errors, dtype=float)
    mean = float(e.mean())
    sd = float(e.std(ddof=1)) if e.size > 1 else 0.0
    try:
        ll, _ = gaussian_loglik(e)
        score = aic(ll, k)
    except Degenerate:
        score = float("-inf")
    return ForecastRow(
        maturity, model, mean, sd,
        mean - Z95 * sd, mean + Z95 * sd,
        mean - Z99 * sd, mean + Z99 * sd,
        score,
    )


def parameter_counts(n_factors: int) -> dict:
    # OU (a, K, sigma per factor) + factor loadings + one error variance;
    # the shift model also carries the tuned gamma
    base = 3 * n_factors + n_factors + 1
    return {SHIFT_SPREAD: base + 1, SPREAD_ONLY: base, EMPIRICAL: base}


def run_daily_forecast(panel: CurvePanel, config: AfEstimatorConfig, result: Optional[PipelineResult] = None) -> ForecastReport:
    """One-day-ahead forecasts of each row after ``config.warmup``.

    The OU parameters are fitted once on the whole panel; the base factor
    estimate for row k only uses rows before k (the filter's one-step
    prediction by default).
    """
    if panel.n_dates <= config.warmup + 1:
        raise InsufficientData(f"{panel.n_dates} rows, warmup is {config.warmup}")
    if result is None:
        result = fit_pipeline(panel, config.basis(), "daily", config.dt, refine=config.refine)
    start = max(config.warmup, 1)
    idx = range(start, panel.n_dates)
    mats = result.maturities
    err = {m: np.empty((len(idx), len(mats))) for m in MODELS}
    for r, k in enumerate(idx):
        obs = panel.rates[k]
        err[SHIFT_SPREAD][r] = obs - af_estimate_step(result, config, k).value(mats)
        err[SPREAD_ONLY][r] = obs - spread_only_curve(result, config, k).value(mats)
        err[EMPIRICAL][r] = obs - empirical_curve(result, config, k).value(mats)
    k_params = parameter_counts(result.spec.n_factors)
    rows = [
        error_statistics(err[m][:, j], float(T), m, k_params[m])
        for j, T in enumerate(mats)
        for m in MODELS
    ]
    return ForecastReport(rows, err, [panel.dates[k] for k in idx], mats, k_params)


# ------------------------------------------------------------ two-month windows


@dataclass
class ProportionRow:
    label: str
    n_windows: int
    wins: int
    p_hat: float
    wilson_lo: float
    wilson_hi: float
    runs: int
    runs_p: float


PROPORTION_COLUMNS = ("label", "n_windows", "wins", "p_hat", "wilson_lo", "wilson_hi", "runs", "runs_p")


@dataclass
class ProportionReport:
    """Share of windows where the regularized curve has the lower squared error.

    One row per maturity plus a pooled row (label ``">=<long_end>"``) that
    compares SSE summed over all maturities at or beyond ``long_end``.
    ``sse`` holds the per-window, per-maturity SSE of both models.
    """

    rows: list
    wins: np.ndarray
    pooled_wins: np.ndarray
    sse: dict
    maturities: np.ndarray
    confidence: float

    def row(self, label: str) -> ProportionRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    @property
    def pooled(self) -> ProportionRow:
        return self.rows[-1]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PROPORTION_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(getattr(r, c)) for c in PROPORTION_COLUMNS])


def compare_sse(sse_reg, sse_naive) -> np.ndarray:
    """Win flags for the regularized model; ties count as losses."""
    return np.asarray(sse_reg) < np.asarray(sse_naive)


def proportion_row(label: str, wins, confidence: float) -> ProportionRow:
    wins = np.asarray(wins, dtype=bool)
    n = int(wins.size)
    x = int(wins.sum())
    lo, hi = wilson_interval(x, n, confidence)
    try:
        rt = runs_test(list(wins))
        runs, p = rt.runs, rt.p_value
    except Degenerate:
        runs, p = count_runs(list(wins)), float("nan")
    return ProportionRow(label, n, x, x / n, lo, hi, runs, p)


def window_sse(panel: CurvePanel, result: PipelineResult, config: AfEstimatorConfig, windows, gamma=None) -> tuple:
    """Per-window SSE of the regularized and naive curves against the window's rows."""
    H = basis_matrix(result.spec, result.maturities)
    reg = np.empty((len(windows), len(result.maturities)))
    naive = np.empty_like(reg)
    for r, w in enumerate(windows):
        data = panel.rates[result.rows[w]]
        curve = af_estimate_step(result, config, w, gamma).value(result.maturities)
        base = H @ base_estimate(result, config, w)
        reg[r] = np.sum((data - curve) ** 2, axis=0)
        naive[r] = np.sum((data - base) ** 2, axis=0)
    return reg, naive


def run_bimonthly_estimate(panel: CurvePanel, config: AfEstimatorConfig, result: Optional[PipelineResult] = None) -> ProportionReport:
    """Regularized versus naive fit on each non-overlapping two-month window."""
    if result is None:
        result = fit_pipeline(panel, config.basis(), "bimonthly", config.dt, config.window, refine=False)
    windows = range(len(result.rows))
    reg, naive = window_sse(panel, result, config, windows)
    wins = compare_sse(reg, naive)
    long = result.maturities >= config.long_end
    rows = [proportion_row(_fmt(T), wins[:, j], config.confidence) for j, T in enumerate(result.maturities)]
    pooled = np.zeros(len(windows), dtype=bool)
    if long.any():
        pooled = compare_sse(reg[:, long].sum(axis=1), naive[:, long].sum(axis=1))
        rows.append(proportion_row(f">={_fmt(config.long_end)}", pooled, config.confidence))
    return ProportionReport(rows, wins, pooled, {"regularized": reg, "naive": naive}, result.maturities, config.confidence)


# ------------------------------------------------------------ sequential validation


def _fold_ends(n_units: int, folds: int, horizon: int) -> list:
    return [n_units - (folds - k) * horizon for k in range(folds)]


def _validation_sse(panel: CurvePanel, config: AfEstimatorConfig, n_factors: int, gammas, mode: str) -> np.ndarray:
    """Mean validation SSE for each gamma, over forward-chaining folds.

    Daily: train on rows [0, e), validate the one-step forecast of row e.
    Two-month: train on windows [0, e), validate window e.
    """
    spec = config.basis(n_factors)
    unit = 1 if mode == "daily" else config.window
    n_units = panel.n_dates // unit
    ends = _fold_ends(n_units, config.cv_folds, 1)
    min_units = max(3 * n_factors, config.warmup) if mode == "daily" else n_factors + 2
    if ends[0] < min_units or (mode != "daily" and ends[0] * unit < 3 * n_factors):
        raise InsufficientData(
            f"{n_units} {'rows' if mode == 'daily' else 'windows'} too few for {config.cv_folds} folds"
        )
    totals = np.zeros(len(gammas))
    for e in ends:
        train = slice_rows(panel, slice(0, e * unit))
        fitted = fit_pipeline(train, spec, mode, config.dt, config.window, refine=config.cv_refine)
        ext = reapply(fitted, slice_rows(panel, slice(0, (e + 1) * unit)))
        data = panel.rates[ext.rows[e]]
        for g, gamma in enumerate(gammas):
            curve = af_estimate_step(ext, config, e, gamma).value(ext.maturities)
            totals[g] += float(np.sum((data - curve) ** 2))
    return totals / len(ends)


def cross_validate(panel: CurvePanel, config: AfEstimatorConfig, mode: str = "daily") -> tuple:
    """(gamma*, n*): gamma by forward-chaining validation at the default factor count,
    then the factor count at gamma*. Ties go to the smaller value."""
    if mode not in ("daily", "bimonthly"):
        raise ValueError(f"unknown mode {mode!r}")
    gammas = sorted(config.gamma_grid)
    g_sse = _validation_sse(panel, config, config.n_default, gammas, mode)
    gamma_star = gammas[int(np.argmin(g_sse))]
    log.info("gamma validation SSE %s", dict(zip(gammas, g_sse.tolist())))
    ns = sorted(config.n_factor_grid)
    n_sse = [float(_validation_sse(panel, config, n, [gamma_star], mode)[0]) for n in ns]
    n_star = ns[int(np.argmin(n_sse))]
    log.info("factor-count validation SSE %s", dict(zip(ns, n_sse)))
    return gamma_star, n_star

