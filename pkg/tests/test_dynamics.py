import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, linalg

from afreg.dynamics import OuParams, exact_discretization, mle_fit, ou_loglik, simulate
from afreg.errors import DegeneratePath, NonStationaryEstimate, TooFewObservations


def _q_by_quadrature(A, sigma, dt):
    S = np.diag(np.asarray(sigma) ** 2)
    d = len(sigma)
    out = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            f = lambda s: (linalg.expm(-A * s) @ S @ linalg.expm(-A.T * s))[i, j]
            out[i, j] = integrate.quad(f, 0, dt, epsabs=1e-16, epsrel=1e-13)[0]
    return out


def test_driftless_limit():
    p = OuParams(np.zeros((2, 2)), [0.01, 0.02], [0.1, 0.2])
    for method in ("closed_form", "quadrature"):
        disc = exact_discretization(p, 0.5, method=method)
        np.testing.assert_allclose(disc.Phi, np.eye(2), atol=1e-15)
        np.testing.assert_allclose(disc.c, 0.0, atol=1e-15)
        np.testing.assert_allclose(disc.Q, np.diag([0.01, 0.04]) * 0.5, rtol=1e-12)


def test_scalar_closed_form():
    a, K, s, dt = 0.7, 0.04, 0.02, 0.25
    disc = exact_discretization(OuParams.diagonal([a], [K], [s]), dt)
    assert disc.Phi[0, 0] == pytest.approx(math.exp(-a * dt), rel=1e-15)
    assert disc.c[0] == pytest.approx(K * (1 - math.exp(-a * dt)), rel=1e-14)
    ref = integrate.quad(lambda u: math.exp(-2 * a * u) * s * s, 0, dt, epsabs=1e-18, epsrel=1e-13)[0]
    assert disc.Q[0, 0] == pytest.approx(ref, rel=1e-12)
    assert disc.Q[0, 0] == pytest.approx(s * s * (1 - math.exp(-2 * a * dt)) / (2 * a), rel=1e-13)


def test_small_dt_limit():
    disc = exact_discretization(OuParams.diagonal([2.0, 5.0], [0.1, 0.2], [0.3, 0.4]), 1e-12)
    np.testing.assert_allclose(disc.Phi, np.eye(2), atol=1e-11)
    assert np.max(np.abs(disc.Q)) < 1e-12


def test_nonpositive_dt():
    with pytest.raises(ValueError):
        exact_discretization(OuParams.diagonal([1.0], [0.0], [1.0]), 0.0)


def test_params_validation():
    with pytest.raises(ValueError):
        OuParams.diagonal([1.0], [0.0], [0.0])
    with pytest.raises(ValueError):
        OuParams(np.eye(2), [0.0], [1.0])
    p = OuParams([[1.0, 0.2], [0.0, 2.0]], [0.1, 0.2], [0.3, 0.4])
    assert not p.is_diagonal
    q = OuParams.from_dict(p.to_dict())
    np.testing.assert_array_equal(q.A, p.A)
    np.testing.assert_array_equal(q.sigma, p.sigma)


matrices = st.lists(st.floats(-2, 2), min_size=4, max_size=4)
sigmas = st.lists(st.floats(0.01, 1.0), min_size=2, max_size=2)


@given(matrices, sigmas, st.floats(1e-3, 2.0))
def test_q_symmetric_psd(entries, sig, dt):
    p = OuParams(np.reshape(entries, (2, 2)), [0.0, 0.0], sig)
    Q = exact_discretization(p, dt).Q
    np.testing.assert_array_equal(Q, Q.T)
    assert np.linalg.eigvalsh(Q).min() >= -1e-12


@given(st.lists(st.floats(-1.5, 3.0), min_size=3, max_size=3), st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3), st.floats(1e-3, 1.0))
def test_diagonal_quadrature_matches_closed_form(a, sig, dt):
    p = OuParams.diagonal(a, [0.0] * 3, sig)
    closed = exact_discretization(p, dt, method="closed_form")
    quad = exact_discretization(p, dt, method="quadrature")
    np.testing.assert_allclose(quad.Q, closed.Q, rtol=0, atol=1e-10 * max(1.0, np.abs(closed.Q).max()))
    np.testing.assert_allclose(quad.Phi, closed.Phi, atol=1e-12)


def test_full_matrix_quadrature_against_elementwise_oracle():
    A = np.array([[0.8, 0.3], [-0.2, 1.5]])
    sig = [0.05, 0.1]
    disc = exact_discretization(OuParams(A, [0.0, 0.0], sig), 0.5)
    np.testing.assert_allclose(disc.Q, _q_by_quadrature(A, sig, 0.5), atol=1e-14, rtol=1e-10)


def test_closed_form_rejects_full_matrix():
    with pytest.raises(ValueError):
        exact_discretization(OuParams([[1.0, 0.1], [0.0, 1.0]], [0, 0], [1, 1]), 0.1, method="closed_form")


def test_simulate_starts_at_beta0_and_is_deterministic():
    p = OuParams.diagonal([0.5, 1.0], [0.03, -0.01], [0.01, 0.02])
    a = simulate(p, [0.02, 0.0], 1 / 252, 500, seed=7)
    b = simulate(p, [0.02, 0.0], 1 / 252, 500, seed=7)
    assert a.shape == (501, 2)
    np.testing.assert_array_equal(a[0], [0.02, 0.0])
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, simulate(p, [0.02, 0.0], 1 / 252, 500, seed=8))
    assert simulate(p, [0.0, 0.0], 0.1, 0, seed=1).shape == (1, 2)


def test_simulate_noiseless_limit():
    p = OuParams([[0.5, 0.1], [0.0, 1.0]], [0.03, -0.01], [1e-12, 1e-12])
    dt = 0.1
    path = simulate(p, [0.0, 0.05], dt, 200, seed=3)
    disc = exact_discretization(p, dt)
    x = np.array([0.0, 0.05])
    for k in range(200):
        x = disc.Phi @ x + disc.c
        np.testing.assert_allclose(path[k + 1], x, atol=1e-8)


def test_stationary_variance():
    a, s, dt, n = 1.0, 0.5, 1.0, 1_000_000
    path = simulate(OuParams.diagonal([a], [0.0], [s]), [0.0], dt, n, seed=11)[1:, 0]
    target = s * s / (2 * a)
    phi = math.exp(-a * dt)
    # standard error of the sample variance of a Gaussian AR(1)
    se = target * math.sqrt(2.0 / n * (1 + phi**2) / (1 - phi**2))
    assert abs(path.var() - target) < 3 * se


def test_mle_recovers_scalar_parameters():
    truth = OuParams.diagonal([0.5], [0.03], [0.01])
    path = simulate(truth, [0.03], 1 / 252, 100_000, seed=0)
    est = mle_fit(path, 1 / 252)
    assert est.A[0, 0] == pytest.approx(0.5, rel=0.10)
    assert est.K[0] == pytest.approx(0.03, rel=0.10)
    assert est.sigma[0] == pytest.approx(0.01, rel=0.10)


def test_mle_constant_path():
    with pytest.raises(DegeneratePath):
        mle_fit(np.full((50, 1), 0.03), 1 / 252)


def test_mle_too_few_rows():
    with pytest.raises(TooFewObservations):
        mle_fit(np.random.default_rng(0).normal(size=(3, 2)), 1 / 252)


def test_mle_diagonal_is_separable():
    x = simulate(OuParams.diagonal([1.0], [0.01], [0.02]), [0.0], 0.1, 400, seed=1)[:, 0]
    y = simulate(OuParams.diagonal([3.0], [-0.02], [0.05]), [0.0], 0.1, 400, seed=2)[:, 0]
    joint = mle_fit(np.column_stack([x, y]), 0.1)
    fx, fy = mle_fit(x[:, None], 0.1), mle_fit(y[:, None], 0.1)
    assert joint.is_diagonal
    np.testing.assert_allclose(np.diag(joint.A), [fx.A[0, 0], fy.A[0, 0]], rtol=1e-14)
    np.testing.assert_allclose(joint.K, [fx.K[0], fy.K[0]], rtol=1e-14)
    np.testing.assert_allclose(joint.sigma, [fx.sigma[0], fy.sigma[0]], rtol=1e-14)


def test_mle_flags_explosive_path():
    path = np.cumprod(np.full(60, 1.05))[:, None] + np.random.default_rng(0).normal(0, 1e-3, (60, 1))
    with pytest.warns(NonStationaryEstimate):
        mle_fit(path, 1.0)


def test_mle_clamps_negative_autocorrelation():
    x = np.array([(-1.0) ** k for k in range(40)]) + np.random.default_rng(1).normal(0, 0.1, 40)
    with pytest.warns(NonStationaryEstimate):
        est = mle_fit(x[:, None], 1.0)
    assert est.A[0, 0] == pytest.approx(-math.log(1e-8), rel=1e-12)


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_mle_loglik_not_below_truth(seed):
    truth = OuParams.diagonal([0.8, 2.0], [0.02, -0.01], [0.01, 0.03])
    path = simulate(truth, [0.02, -0.01], 1 / 52, 300, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonStationaryEstimate)
        est = mle_fit(path, 1 / 52)
    assert ou_loglik(est, path, 1 / 52) >= ou_loglik(truth, path, 1 / 52) - 1e-8


def test_full_mode_not_worse_than_diagonal():
    truth = OuParams([[1.0, 0.5], [-0.3, 2.0]], [0.02, 0.0], [0.02, 0.03])
    path = simulate(truth, [0.02, 0.0], 1 / 52, 800, seed=4)
    diag = mle_fit(path, 1 / 52)
    full = mle_fit(path, 1 / 52, mode="full")
    assert ou_loglik(full, path, 1 / 52) >= ou_loglik(diag, path, 1 / 52) - 1e-8
    assert ou_loglik(full, path, 1 / 52) >= ou_loglik(truth, path, 1 / 52) - 1e-8


def test_loglik_matches_direct_density():
    from scipy import stats

    p = OuParams.diagonal([0.9], [0.01], [0.05])
    path = simulate(p, [0.0], 0.2, 30, seed=9)
    disc = exact_discretization(p, 0.2)
    ref = sum(
        stats.norm(disc.Phi[0, 0] * path[k, 0] + disc.c[0], math.sqrt(disc.Q[0, 0])).logpdf(path[k + 1, 0])
        for k in range(30)
    )
    assert ou_loglik(p, path, 0.2) == pytest.approx(ref, rel=1e-12)
