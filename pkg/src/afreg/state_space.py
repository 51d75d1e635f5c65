"""Linear-Gaussian state-space estimation of the factors and the fitting pipeline."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from scipy import linalg, optimize, signal

from .basis import NsBasisSpec, basis_matrix, fit_panel_rows
from .dynamics import DiscreteOu, OuParams, exact_discretization, mle_fit
from .errors import DimensionMismatch, InsufficientData, NonStationaryEstimate, SingularInnovationCovariance
from .market_data import CurvePanel

log = logging.getLogger(__name__)

_LOG2PI = np.log(2.0 * np.pi)
DAILY_DT = 1.0 / 252.0
BIMONTHLY_WINDOW = 42


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    dyn: DiscreteOu
    H: np.ndarray
    R: np.ndarray
    init_mean: np.ndarray
    init_cov: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        m0 = np.asarray(self.init_mean, dtype=float).reshape(-1)
        P0 = np.atleast_2d(np.asarray(self.init_cov, dtype=float))
        d = self.dyn.Phi.shape[0]
        if H.shape[1] != d or R.shape != (H.shape[0], H.shape[0]) or m0.shape != (d,) or P0.shape != (d, d):
            raise DimensionMismatch("state-space dimensions are inconsistent")
        for name, val in (("H", H), ("R", 0.5 * (R + R.T)), ("init_mean", m0), ("init_cov", 0.5 * (P0 + P0.T))):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n_obs(self) -> int:
        return self.H.shape[0]

    @property
    def n_states(self) -> int:
        return self.H.shape[1]


@dataclass
class StatePath:
    """Filtered or smoothed factor means and covariances.

    ``pred_means``/``pred_covs`` hold the one-step predictions (prior at
    each step) when the path comes from the filter.
    """

    means: np.ndarray
    covs: List[np.ndarray]
    loglik: float
    pred_means: Optional[np.ndarray] = None
    pred_covs: Optional[List[np.ndarray]] = None


def _chol(S):
    try:
        return linalg.cho_factor(S, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise SingularInnovationCovariance("innovation covariance is not positive definite") from None


def kalman_filter(model: StateSpaceModel, obs) -> StatePath:
    """Predict/update recursion with the Joseph-form covariance update.

    ``init_mean``/``init_cov`` are the prior for the first state, so the
    first step is an update only.
    """
    Y = np.atleast_2d(np.asarray(obs, dtype=float))
    if Y.shape[1] != model.n_obs:
        raise DimensionMismatch(f"observations have {Y.shape[1]} columns, model expects {model.n_obs}")
    n = Y.shape[0]
    if n < 1:
        raise InsufficientData("no observations")
    Phi, c, Q = model.dyn.Phi, model.dyn.c, model.dyn.Q
    H, R = model.H, model.R
    d = model.n_states
    eye = np.eye(d)
    x = model.init_mean.copy()
    P = model.init_cov.copy()
    means = np.empty((n, d))
    pmeans = np.empty((n, d))
    covs, pcovs = [], []
    ll = 0.0
    for t in range(n):
        if t > 0:
            x = Phi @ x + c
            P = Phi @ P @ Phi.T + Q
        pmeans[t] = x
        pcovs.append(0.5 * (P + P.T))
        v = Y[t] - H @ x
        S = H @ P @ H.T + R
        cf = _chol(0.5 * (S + S.T))
        gain = linalg.cho_solve(cf, H @ P, check_finite=False).T
        x = x + gain @ v
        IKH = eye - gain @ H
        P = IKH @ P @ IKH.T + gain @ R @ gain.T
        P = 0.5 * (P + P.T)
        means[t] = x
        covs.append(P)
        logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
        ll -= 0.5 * (len(v) * _LOG2PI + logdet + v @ linalg.cho_solve(cf, v, check_finite=False))
    return StatePath(means, covs, float(ll), pmeans, pcovs)


def kalman_smoother(model: StateSpaceModel, obs) -> StatePath:
    """Rauch-Tung-Striebel backward pass over the filter output."""
    filt = kalman_filter(model, obs)
    n, d = filt.means.shape
    Phi = model.dyn.Phi
    xs = filt.means.copy()
    Ps = [None] * n
    Ps[-1] = filt.covs[-1]
    for t in range(n - 2, -1, -1):
        Pp = filt.pred_covs[t + 1]
        try:
            J = linalg.solve(Pp, Phi @ filt.covs[t], assume_a="pos").T
        except (linalg.LinAlgError, ValueError):
            J = filt.covs[t] @ Phi.T @ np.linalg.pinv(Pp)
        xs[t] = filt.means[t] + J @ (xs[t + 1] - filt.pred_means[t + 1])
        P = filt.covs[t] + J @ (Ps[t + 1] - Pp) @ J.T
        Ps[t] = 0.5 * (P + P.T)
    return StatePath(xs, Ps, filt.loglik, filt.pred_means, filt.pred_covs)


def filter_loglik(model: StateSpaceModel, obs, tol: float = 1e-13) -> float:
    """Filter log-likelihood only.

    The covariance recursion does not depend on the data, so once the
    filtered covariance stops changing (relative change below ``tol``) the
    gain is frozen. From then on the one-step predictions follow a
    time-invariant linear recursion, which is run mode by mode with
    ``lfilter`` after diagonalizing its transition matrix.
    """
    Y = np.atleast_2d(np.asarray(obs, dtype=float))
    Phi, c, Q = model.dyn.Phi, model.dyn.c, model.dyn.Q
    H, R = model.H, model.R
    eye = np.eye(model.n_states)
    x = model.init_mean.copy()
    P = model.init_cov.copy()
    ll = 0.0
    m = H.shape[0]
    n = Y.shape[0]
    P_prev = None
    for t in range(n):
        if t > 0:
            x = Phi @ x + c
            P = Phi @ P @ Phi.T + Q
        S = H @ P @ H.T + R
        cf = _chol(0.5 * (S + S.T))
        gain = linalg.cho_solve(cf, H @ P, check_finite=False).T
        logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
        v = Y[t] - H @ x
        ll -= 0.5 * (m * _LOG2PI + logdet + v @ linalg.cho_solve(cf, v, check_finite=False))
        x = x + gain @ v
        IKH = eye - gain @ H
        P = IKH @ P @ IKH.T + gain @ R @ gain.T
        P = 0.5 * (P + P.T)
        if P_prev is not None and np.max(np.abs(P - P_prev)) <= tol * max(np.max(np.abs(P)), 1e-300):
            if t + 1 < n:
                Sinv = linalg.cho_solve(cf, np.eye(m), check_finite=False)
                ll += _steady_state_loglik(Phi @ x + c, Phi, c, H, gain, Sinv, logdet, Y[t + 1 :])
            return float(ll)
        P_prev = P
    return float(ll)


def _steady_state_loglik(x0, Phi, c, H, gain, Sinv, logdet, Y) -> float:
    """Log-likelihood of ``Y`` under a frozen gain, ``x0`` being the first prediction."""
    F = Phi @ (np.eye(len(x0)) - gain @ H)
    drive = Y @ (Phi @ gain).T + c
    n, m = Y.shape
    lam, V = np.linalg.eig(F)
    if np.linalg.cond(V) < 1e8:
        u = np.linalg.solve(V, drive[:-1].T)
        z0 = np.linalg.solve(V, x0)
        Z = np.empty((len(lam), n), dtype=complex)
        Z[:, 0] = z0
        for i, l in enumerate(lam):
            if n > 1:
                Z[i, 1:] = signal.lfilter([1.0], [1.0, -l], u[i], zi=[l * z0[i]])[0]
        X = (V @ Z).real.T
    else:
        X = np.empty((n, len(x0)))
        X[0] = x0
        for k in range(1, n):
            X[k] = F @ X[k - 1] + drive[k - 1]
    V_inn = Y - X @ H.T
    quad = np.einsum("ij,jk,ik->", V_inn, Sinv, V_inn)
    return -0.5 * (n * (m * _LOG2PI + logdet) + quad)


# ---------------------------------------------------------------- pipeline


@dataclass
class PipelineResult:
    """Everything fitted by :func:`fit_pipeline`.

    ``obs`` is the observation matrix the filter ran on (daily rows or
    window-mean curves) and ``times`` the matching year fractions since the
    first panel row. ``regression_betas`` are the cross-section estimates
    that initialized the likelihood step.
    """

    spec: NsBasisSpec
    mode: str
    dt: float
    ou: OuParams
    ou_initial: OuParams
    model: StateSpaceModel
    filtered: StatePath
    smoothed: StatePath
    regression_betas: np.ndarray
    obs: np.ndarray
    times: np.ndarray
    maturities: np.ndarray
    rows: list = field(default_factory=list)
    window: int = 1

    def __iter__(self):
        # (ou, model, smoothed) unpacking
        return iter((self.ou, self.model, self.smoothed))


def _initial_cov(ou: OuParams, span: float) -> np.ndarray:
    if ou.is_stable():
        P = ou.stationary_covariance()
        if np.all(np.isfinite(P)) and np.all(np.linalg.eigvalsh(0.5 * (P + P.T)) > 0):
            return 10.0 * P
    return 10.0 * ou.factor_covariance * max(span, 1.0)


def build_model(ou: OuParams, H, R, init_mean, dt, span) -> StateSpaceModel:
    return StateSpaceModel(exact_discretization(ou, dt), H, R, init_mean, _initial_cov(ou, span))


def _refine_ou(ou0: OuParams, H, R, init_mean, Y, dt) -> OuParams:
    """Maximize the filter likelihood over diagonal OU parameters, starting at ``ou0``."""
    d = ou0.dim
    span = Y.shape[0] * dt
    a0, K0, s0 = np.diag(ou0.A).copy(), ou0.K.copy(), ou0.sigma.copy()
    a_scale = np.maximum(np.abs(a0), 1.0 / span)
    k_scale = np.maximum(np.sqrt(np.diag(_initial_cov(ou0, span))) / np.sqrt(10.0), 1e-6)

    def unpack(u):
        return OuParams.diagonal(a0 + u[:d] * a_scale, K0 + u[d : 2 * d] * k_scale, s0 * np.exp(u[2 * d :]))

    def loglik(ou):
        return filter_loglik(build_model(ou, H, R, init_mean, dt, span), Y)

    base = loglik(ou0)
    n = Y.shape[0]

    def nll(u):
        try:
            return -(loglik(unpack(u)) - base) / n
        except (SingularInnovationCovariance, ValueError, linalg.LinAlgError):
            return np.inf

    res = optimize.minimize(nll, np.zeros(3 * d), method="L-BFGS-B", options={"maxiter": 200})
    if np.isfinite(res.fun) and res.fun < 0:
        return unpack(res.x)
    return ou0


def _observations(panel: CurvePanel, mode: str, dt: float, window: int):
    t_all = panel.times(dt)
    if mode == "daily":
        return panel.rates, t_all, [[i] for i in range(panel.n_dates)], dt
    if mode == "bimonthly":
        nw = panel.n_dates // window
        rows = [list(range(w * window, (w + 1) * window)) for w in range(nw)]
        Y = np.array([panel.rates[r].mean(axis=0) for r in rows]).reshape(nw, panel.n_maturities)
        times = np.array([t_all[r].mean() for r in rows])
        return Y, times, rows, window * dt
    raise ValueError(f"unknown mode {mode!r}")


def _fit_ou(B, step, ou_mode) -> OuParams:
    # Diagonal fits are separable; fitting coordinate by coordinate also covers
    # minimum-norm factor series that live in a proper subspace.
    if ou_mode != "diagonal":
        return mle_fit(B, step, ou_mode)
    fits = [mle_fit(B[:, [i]], step, "diagonal") for i in range(B.shape[1])]
    return OuParams.diagonal(
        [f.A[0, 0] for f in fits], [f.K[0] for f in fits], [f.sigma[0] for f in fits]
    )


def fit_pipeline(
    panel: CurvePanel,
    spec: NsBasisSpec,
    mode: str = "daily",
    dt: float = DAILY_DT,
    window: int = BIMONTHLY_WINDOW,
    ou_mode: str = "diagonal",
    refine: bool = True,
) -> PipelineResult:
    """Regression, OU maximum likelihood, Kalman filter and smoother, in that order.

    ``daily``: one cross-section regression per row, OU MLE on that factor
    series, then (when ``refine``) the OU parameters are moved to maximize
    the filter likelihood with R held fixed. ``bimonthly``: consecutive
    non-overlapping blocks of ``window`` rows are pooled into one regression
    each and the OU is fitted on the block estimates with step
    ``window * dt``; the filter then runs on block-mean curves.
    """
    d = spec.n_factors
    if panel.n_dates < 3 * d:
        raise InsufficientData(f"{panel.n_dates} rows, need at least {3 * d}")
    H = basis_matrix(spec, panel.maturities)
    under = H.shape[0] < d
    Y, times, rows, step = _observations(panel, mode, dt, window)
    if mode == "bimonthly" and len(rows) < d + 2:
        raise InsufficientData(f"{len(rows)} windows of {window} rows, need at least {d + 2}")
    B = fit_panel_rows(spec, panel.maturities, Y, allow_underdetermined=under)
    resid = Y - B @ H.T
    R = np.diag(np.maximum(np.mean(resid**2, axis=0), 1e-14))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NonStationaryEstimate)
        ou0 = _fit_ou(B, step, ou_mode)
    for w in caught:
        log.warning("%s", w.message)
    ou = ou0
    if refine and mode == "daily" and ou_mode == "diagonal":
        ou = _refine_ou(ou0, H, R, B[0], Y, step)
    model = build_model(ou, H, R, B[0], step, Y.shape[0] * step)
    filtered = kalman_filter(model, Y)
    smoothed = kalman_smoother(model, Y)
    return PipelineResult(
        spec=spec, mode=mode, dt=dt, ou=ou, ou_initial=ou0, model=model,
        filtered=filtered, smoothed=smoothed, regression_betas=B, obs=Y,
        times=times, maturities=np.array(panel.maturities), rows=rows,
        window=window if mode == "bimonthly" else 1,
    )


def reapply(result: PipelineResult, panel: CurvePanel) -> PipelineResult:
    """Run an already fitted model, parameters unchanged, over ``panel``.

    Used for out-of-sample evaluation: fit on a prefix, then filter through
    the longer panel so predictions at the new rows only use earlier data.
    """
    if not np.array_equal(panel.maturities, result.maturities):
        raise DimensionMismatch("panel maturities differ from the fitted model")
    Y, times, rows, _ = _observations(panel, result.mode, result.dt, result.window)
    if len(rows) == 0:
        raise InsufficientData("panel shorter than one window")
    under = len(result.maturities) < result.spec.n_factors
    B = fit_panel_rows(result.spec, panel.maturities, Y, allow_underdetermined=under)
    return replace(
        result,
        filtered=kalman_filter(result.model, Y),
        smoothed=kalman_smoother(result.model, Y),
        regression_betas=B,
        obs=Y,
        times=times,
        rows=rows,
    )


DOCUMENT_VERSION = 1


def model_document(result: PipelineResult) -> dict:
    """JSON-ready description of a fitted pipeline (parameters only, no data)."""
    return {
        "version": DOCUMENT_VERSION,
        "mode": result.mode,
        "dt": result.dt,
        "window": result.window,
        "maturities": result.maturities.tolist(),
        "basis": result.spec.to_dict(),
        "ou": result.ou.to_dict(),
        "R": result.model.R.tolist(),
        "init": {"mean": result.model.init_mean.tolist(), "cov": result.model.init_cov.tolist()},
        "loglik": result.filtered.loglik,
    }


def load_model_document(doc: dict) -> tuple:
    """Inverse of :func:`model_document`: ``(spec, ou, StateSpaceModel)``."""
    if doc.get("version") != DOCUMENT_VERSION:
        raise ValueError(f"unsupported model document version {doc.get('version')!r}")
    spec = NsBasisSpec.from_dict(doc["basis"])
    ou = OuParams.from_dict(doc["ou"])
    step = doc["dt"] * doc.get("window", 1)
    H = basis_matrix(spec, doc["maturities"])
    model = StateSpaceModel(
        exact_discretization(ou, step), H, doc["R"], doc["init"]["mean"], doc["init"]["cov"]
    )
    return spec, ou, model
