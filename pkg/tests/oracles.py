"""Independent reference computations used to check the library.

Nothing here imports the code under test's numerics; each oracle is a
direct, slow transcription of the defining formula.
"""

import itertools
import math
import warnings

import mpmath as mp
import numpy as np
from scipy import integrate, stats

mp.mp.dps = 40


# ---------------------------------------------------------------- basis


def ns_loadings_mp(T, tau, exponents):
    """Nelson-Siegel loadings at high precision."""
    T = mp.mpf(T)
    tau = mp.mpf(tau)
    x = T / tau
    if x == 0:
        phi2 = mp.mpf(1)
        phi3 = mp.mpf(0)
    else:
        phi2 = -mp.expm1(-x) / x
        phi3 = phi2 - mp.e ** (-x)
    out = [mp.mpf(1), phi2, phi3]
    for k in exponents:
        y = T ** mp.mpf(k) / tau
        out.append(mp.mpf(1) if y == 0 else -mp.expm1(-y) / y)
    return [float(v) for v in out]


def ns_design(maturities, tau, exponents):
    return np.array([ns_loadings_mp(T, tau, exponents) for T in maturities])


def normal_equations_solution(X, y):
    return np.linalg.solve(X.T @ X, X.T @ y)


# ---------------------------------------------------------------- spread


def frozen_spread_quadrature(loadings, A, K, sigma, beta, t, vol_form="covariation"):
    """-int_0^t [phi . A(K - beta) + vol] ds with beta frozen, by adaptive quadrature."""
    phi = np.asarray(loadings, dtype=float)
    drift = phi @ (np.asarray(A) @ (np.asarray(K) - np.asarray(beta)))
    if vol_form == "covariation":
        vol = 0.5 * float(np.sum(phi**2 * np.asarray(sigma) ** 2))
    else:
        vol = 0.5 * float(phi @ np.asarray(sigma)) ** 2
    with warnings.catch_warnings():
        # constant integrand: roundoff notices are spurious
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(lambda s: drift + vol, 0.0, t, epsabs=1e-14, epsrel=1e-14)
    return -val


# ---------------------------------------------------------------- Kalman


def joint_gaussian(Phi, c, Q, H, R, m0, P0, T):
    """Mean and covariance of stacked states X and observations Y for a T-step model."""
    d = len(m0)
    m = H.shape[0]
    # X = F z + g where z = (x0, w1, ..., w_{T-1})
    F = np.zeros((T * d, T * d))
    g = np.zeros(T * d)
    Sz = np.zeros((T * d, T * d))
    Sz[:d, :d] = P0
    for k in range(1, T):
        Sz[k * d:(k + 1) * d, k * d:(k + 1) * d] = Q
    mean_x = np.asarray(m0, dtype=float)
    for t in range(T):
        if t > 0:
            mean_x = Phi @ mean_x + c
        g[t * d:(t + 1) * d] = mean_x
        for s in range(t + 1):
            F[t * d:(t + 1) * d, s * d:(s + 1) * d] = np.linalg.matrix_power(Phi, t - s)
    Sx = F @ Sz @ F.T
    Hb = np.kron(np.eye(T), H)
    Sy = Hb @ Sx @ Hb.T + np.kron(np.eye(T), R)
    Sxy = Sx @ Hb.T
    return g, Sx, Hb @ g, Sy, Sxy


def kalman_oracle(Phi, c, Q, H, R, m0, P0, Y):
    """(loglik, filtered means, smoothed means) from Gaussian conditioning."""
    Y = np.atleast_2d(Y)
    T, m = Y.shape
    d = len(m0)
    mx, Sx, my, Sy, Sxy = joint_gaussian(Phi, c, Q, H, R, m0, P0, T)
    y = Y.reshape(-1)
    ll = stats.multivariate_normal(my, Sy, allow_singular=False).logpdf(y)
    smooth = (mx + Sxy @ np.linalg.solve(Sy, y - my)).reshape(T, d)
    filt = np.empty((T, d))
    for t in range(T):
        k = (t + 1) * m
        cond = mx + Sxy[:, :k] @ np.linalg.solve(Sy[:k, :k], y[:k] - my[:k])
        filt[t] = cond.reshape(T, d)[t]
    return float(ll), filt, smooth


# ---------------------------------------------------------------- HMM


def hmm_brute_loglik(A, B, pi, obs):
    A, B, pi = map(np.asarray, (A, B, pi))
    n = A.shape[0]
    total = 0.0
    for path in itertools.product(range(n), repeat=len(obs)):
        p = pi[path[0]] * B[path[0], obs[0]]
        for t in range(1, len(obs)):
            p *= A[path[t - 1], path[t]] * B[path[t], obs[t]]
        total += p
    return math.log(total)


def hmm_brute_viterbi(A, B, pi, obs):
    """Max-probability path; among ties the lexicographically smallest."""
    A, B, pi = map(np.asarray, (A, B, pi))
    n = A.shape[0]
    best, best_p = None, -1.0
    for path in itertools.product(range(n), repeat=len(obs)):
        p = pi[path[0]] * B[path[0], obs[0]]
        for t in range(1, len(obs)):
            p *= A[path[t - 1], path[t]] * B[path[t], obs[t]]
        if p > best_p * (1 + 1e-12):
            best, best_p = list(path), p
    return best, best_p


def hmm_path_prob(A, B, pi, obs, path):
    p = pi[path[0]] * B[path[0], obs[0]]
    for t in range(1, len(obs)):
        p *= A[path[t - 1], path[t]] * B[path[t], obs[t]]
    return p


# ---------------------------------------------------------------- statistics


def wilson_mp(x, n, confidence):
    z = mp.sqrt(2) * mp.erfinv(mp.mpf(confidence))
    x, n = mp.mpf(x), mp.mpf(n)
    p = x / n
    denom = 1 + z**2 / n
    centre = (p + z**2 / (2 * n)) / denom
    half = z * mp.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / denom
    return float(centre - half), float(centre + half)


def runs_count(seq):
    return 1 + sum(1 for a, b in zip(seq, seq[1:]) if a != b)


def exact_runs_distribution(n1, n2):
    n = n1 + n2
    dist = {}
    for pos in itertools.combinations(range(n), n1):
        s = [0] * n
        for p in pos:
            s[p] = 1
        r = runs_count(s)
        dist[r] = dist.get(r, 0) + 1
    return dist


def exact_runs_pvalue(runs, n1, n2):
    """Two-sided exact p: probability of a run count at least as far from the mean."""
    dist = exact_runs_distribution(n1, n2)
    total = sum(dist.values())
    mu = 1 + 2 * n1 * n2 / (n1 + n2)
    far = abs(runs - mu) - 1e-12
    return sum(c for r, c in dist.items() if abs(r - mu) >= far) / total


def normal_loglik_direct(errors, var):
    return float(sum(stats.norm(0.0, math.sqrt(var)).logpdf(e) for e in errors))


# ---------------------------------------------------------------- ledger


def es_by_hand(returns, level):
    losses = sorted((-r for r in returns), reverse=True)
    k = max(1, math.ceil(round((1 - level) * len(losses), 9)))
    return sum(losses[:k]) / k
