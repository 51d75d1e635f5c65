"""Multivariate Ornstein-Uhlenbeck factor dynamics dβ = A(K - β)dt + Σ dW."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, linalg, optimize

from .errors import DegeneratePath, NonStationaryEstimate, TooFewObservations

_LOG2PI = np.log(2.0 * np.pi)


def _ro(a, ndim):
    a = np.array(a, dtype=float)
    if ndim == 2:
        a = np.atleast_2d(a)
    else:
        a = np.atleast_1d(a).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class OuParams:
    """Mean reversion ``A`` (1/years), level ``K``, diagonal volatility ``sigma``."""

    A: np.ndarray
    K: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _ro(self.A, 2))
        object.__setattr__(self, "K", _ro(self.K, 1))
        object.__setattr__(self, "sigma", _ro(self.sigma, 1))
        d = self.K.shape[0]
        if self.A.shape != (d, d) or self.sigma.shape != (d,):
            raise ValueError("inconsistent OU parameter dimensions")
        if np.any(self.sigma <= 0):
            raise ValueError("sigma entries must be positive")

    @property
    def dim(self) -> int:
        return self.K.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return not np.any(self.A - np.diag(np.diag(self.A)))

    @property
    def factor_covariance(self) -> np.ndarray:
        """Instantaneous covariance ΣΣᵀ of the factor shocks (per year)."""
        return np.diag(self.sigma**2)

    def drift(self, beta) -> np.ndarray:
        return self.A @ (self.K - np.asarray(beta, dtype=float))

    def stationary_covariance(self) -> np.ndarray:
        """Solution of A P + P Aᵀ = ΣΣᵀ; only meaningful for stable A."""
        return linalg.solve_continuous_lyapunov(self.A, self.factor_covariance)

    def is_stable(self) -> bool:
        return bool(np.all(np.linalg.eigvals(self.A).real > 0))

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "K": self.K.tolist(), "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "OuParams":
        return cls(d["A"], d["K"], d["sigma"])

    @classmethod
    def diagonal(cls, a, K, sigma) -> "OuParams":
        return cls(np.diag(np.atleast_1d(np.asarray(a, dtype=float))), K, sigma)


@dataclass(frozen=True, eq=False)
class DiscreteOu:
    """One step of the exact discretization: β' = Φβ + c + N(0, Q)."""

    Phi: np.ndarray
    c: np.ndarray
    Q: np.ndarray
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "Phi", _ro(self.Phi, 2))
        object.__setattr__(self, "c", _ro(self.c, 1))
        Q = np.array(self.Q, dtype=float)
        Q = 0.5 * (Q + Q.T)
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)


def _expm1_ratio(x):
    """(1 - e^{-x})/x, continuous through x = 0 and valid for x < 0."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    nz = np.abs(x) > 1e-12
    out[nz] = -np.expm1(-x[nz]) / x[nz]
    out[~nz] = 1.0 - x[~nz] / 2.0
    return out


def _quadrature_q(A, S, dt):
    def integrand(s):
        E = linalg.expm(-A * s)
        return E @ S @ E.T

    scale = max(float(np.max(np.abs(S))) * dt, 1e-300)
    Q, _ = integrate.quad_vec(integrand, 0.0, dt, epsabs=1e-15 * scale, epsrel=1e-13)
    return 0.5 * (Q + Q.T)


def exact_discretization(params: OuParams, dt: float, method: str = "auto") -> DiscreteOu:
    """Transition Φ = exp(-A dt), intercept (I - Φ)K and noise covariance Q.

    ``method`` is ``"auto"`` (closed form for diagonal A, quadrature of
    exp(-As) ΣΣᵀ exp(-Aᵀs) otherwise), ``"closed_form"`` or ``"quadrature"``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    A = params.A
    d = params.dim
    S = params.factor_covariance
    if method == "auto":
        method = "closed_form" if params.is_diagonal else "quadrature"
    if method == "closed_form":
        if not params.is_diagonal:
            raise ValueError("closed form requires diagonal A")
        a = np.diag(A)
        Phi = np.diag(np.exp(-a * dt))
        Q = np.diag(params.sigma**2 * dt * _expm1_ratio(2.0 * a * dt))
    elif method == "quadrature":
        Phi = linalg.expm(-A * dt)
        Q = _quadrature_q(A, S, dt)
    else:
        raise ValueError(f"unknown method {method!r}")
    c = (np.eye(d) - Phi) @ params.K
    return DiscreteOu(Phi, c, Q, dt)


def _sqrt_psd(Q):
    w, V = np.linalg.eigh(0.5 * (Q + Q.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def simulate(params: OuParams, beta0, dt: float, n_steps: int, seed: int) -> np.ndarray:
    """Exact-discretization path of shape ``(n_steps + 1, d)`` starting at ``beta0``."""
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    disc = exact_discretization(params, dt)
    rng = np.random.default_rng(seed)
    L = _sqrt_psd(disc.Q)
    d = params.dim
    z = rng.standard_normal((n_steps, d))
    path = np.empty((n_steps + 1, d))
    path[0] = np.asarray(beta0, dtype=float)
    for k in range(n_steps):
        path[k + 1] = disc.Phi @ path[k] + disc.c + L @ z[k]
    return path


def ou_loglik(params: OuParams, path, dt: float) -> float:
    """Conditional Gaussian log-likelihood of the path under the exact discretization."""
    path = np.atleast_2d(np.asarray(path, dtype=float))
    if path.shape[0] == 1 and params.dim > 1:
        path = path.T
    disc = exact_discretization(params, dt)
    resid = path[1:] - path[:-1] @ disc.Phi.T - disc.c
    try:
        cf = linalg.cho_factor(disc.Q, lower=True)
    except linalg.LinAlgError:
        return -np.inf
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    quad = np.sum(resid * linalg.cho_solve(cf, resid.T).T)
    n, d = resid.shape
    return float(-0.5 * (n * (d * _LOG2PI + logdet) + quad))


def _ar1_to_ou(phi, b, s2, dt, mean):
    """Map AR(1) coefficients to (a, K, sigma); clamps phi <= 0."""
    flagged = False
    if phi <= 0:
        phi = 1e-8
        flagged = True
    elif phi >= 1:
        flagged = True
    a = -np.log(phi) / dt
    K = mean if abs(1.0 - phi) < 1e-12 else b / (1.0 - phi)
    g = dt * float(_expm1_ratio(np.array([2.0 * a * dt]))[0])
    sigma = np.sqrt(s2 / g)
    return a, K, sigma, flagged


def _ar1_fit(x):
    x0, x1 = x[:-1], x[1:]
    m0, m1 = x0.mean(), x1.mean()
    vx = np.mean((x0 - m0) ** 2)
    if vx <= 0:
        raise DegeneratePath("constant coordinate")
    phi = np.mean((x0 - m0) * (x1 - m1)) / vx
    b = m1 - phi * m0
    s2 = np.mean((x1 - phi * x0 - b) ** 2)
    if s2 <= 0:
        raise DegeneratePath("coordinate follows an exact linear recursion")
    return phi, b, s2


def _check_path(path):
    path = np.asarray(path, dtype=float)
    if path.ndim == 1:
        path = path[:, None]
    n, d = path.shape
    if n < d + 2:
        raise TooFewObservations(f"{n} rows for a {d}-dimensional path")
    inc = np.diff(path, axis=0)
    cov = np.atleast_2d(np.cov(inc, rowvar=False))
    if np.any(np.diag(cov) <= 0) or np.linalg.matrix_rank(cov) < d:
        raise DegeneratePath("increments have a singular covariance")
    return path


def mle_fit(path, dt: float, mode: str = "diagonal") -> OuParams:
    """Maximum-likelihood OU parameters from an observed factor path.

    ``diagonal``: each coordinate is an independent AR(1) whose closed-form
    conditional MLE is mapped back to (a, K, sigma). ``full``: the exact
    conditional likelihood is maximized numerically over a full A, starting
    from the diagonal fit. A :class:`NonStationaryEstimate` warning is
    emitted when a fitted transition is clamped or has modulus >= 1.
    """
    path = _check_path(path)
    d = path.shape[1]
    a = np.empty(d)
    K = np.empty(d)
    sig = np.empty(d)
    flags = []
    for i in range(d):
        phi, b, s2 = _ar1_fit(path[:, i])
        a[i], K[i], sig[i], flagged = _ar1_to_ou(phi, b, s2, dt, path[:, i].mean())
        if flagged:
            flags.append(i)
    if flags:
        warnings.warn(
            f"non-stationary AR(1) estimate for coordinates {flags}", NonStationaryEstimate
        )
    diag = OuParams.diagonal(a, K, sig)
    if mode == "diagonal":
        return diag
    if mode != "full":
        raise ValueError(f"unknown mode {mode!r}")
    return _full_mle(path, dt, diag)


def _full_mle(path, dt, start: OuParams) -> OuParams:
    d = start.dim
    scale_a = np.maximum(np.abs(np.diag(start.A)), 1.0)
    scale_k = np.maximum(path.std(axis=0), 1e-8)

    def unpack(u):
        A = u[: d * d].reshape(d, d) * scale_a[:, None]
        K = start.K + u[d * d : d * d + d] * scale_k
        sig = start.sigma * np.exp(u[d * d + d :])
        return OuParams(A, K, sig)

    u0 = np.concatenate([(start.A / scale_a[:, None]).ravel(), np.zeros(d), np.zeros(d)])
    base = ou_loglik(start, path, dt)
    n = path.shape[0]

    def nll(u):
        try:
            val = ou_loglik(unpack(u), path, dt)
        except (ValueError, linalg.LinAlgError):
            return np.inf
        return -(val - base) / n if np.isfinite(val) else np.inf

    res = optimize.minimize(nll, u0, method="L-BFGS-B", options={"maxiter": 500})
    best = unpack(res.x)
    if ou_loglik(best, path, dt) < base:
        return start
    return best
