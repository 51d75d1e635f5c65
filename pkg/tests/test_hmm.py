import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import hmm_brute_loglik, hmm_brute_viterbi, hmm_path_prob
from afreg.errors import SymbolOutOfRange, TooShort
from afreg.hmm import (
    HmmModel,
    baum_welch,
    best_permutation,
    forward_loglik,
    initial_model,
    mle_transition,
    sample,
    viterbi,
)

PLANTED = HmmModel(
    [[0.8, 0.1, 0.1], [0.15, 0.7, 0.15], [0.1, 0.2, 0.7]],
    [[0.85, 0.1, 0.05], [0.1, 0.8, 0.1], [0.05, 0.1, 0.85]],
    [1 / 3, 1 / 3, 1 / 3],
)


def _random_model(rng, n, m):
    A = rng.dirichlet(np.ones(n), n)
    B = rng.dirichlet(np.ones(m), n)
    return HmmModel(A, B, rng.dirichlet(np.ones(n)))


def test_mle_transition_examples():
    P = mle_transition([0, 0, 1, 1], 2)
    np.testing.assert_array_equal(P, [[0.5, 0.5], [0.0, 1.0]])
    P = mle_transition([2, 2, 2], 3)
    np.testing.assert_array_equal(P[2], [0, 0, 1])
    np.testing.assert_allclose(P[:2], 1 / 3)
    with pytest.raises(TooShort):
        mle_transition([1], 3)
    with pytest.raises(SymbolOutOfRange):
        mle_transition([0, 3], 3)


def test_model_validation():
    with pytest.raises(ValueError):
        HmmModel([[0.5, 0.6], [0.5, 0.5]], [[1, 0], [0, 1]], [0.5, 0.5])
    with pytest.raises(ValueError):
        HmmModel([[1.0]], [[0.5, 0.5], [0.5, 0.5]], [1.0])
    m = HmmModel.from_dict(PLANTED.to_dict())
    np.testing.assert_array_equal(m.transition, PLANTED.transition)


def test_single_state_loglik():
    B = [[0.2, 0.5, 0.3]]
    obs = [0, 1, 1, 2, 0]
    ref = sum(math.log(B[0][o]) for o in obs)
    assert forward_loglik(HmmModel([[1.0]], B, [1.0]), obs) == pytest.approx(ref, rel=1e-14)


def test_uniform_model_loglik():
    m = HmmModel(np.full((3, 3), 1 / 3), np.full((3, 4), 0.25), np.full(3, 1 / 3))
    assert forward_loglik(m, [0, 3, 2, 1, 1, 0, 2]) == pytest.approx(7 * math.log(0.25), rel=1e-14)


@settings(max_examples=80)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 3), st.integers(1, 6))
def test_forward_matches_enumeration(seed, n, m, T):
    rng = np.random.default_rng(seed)
    model = _random_model(rng, n, m)
    obs = rng.integers(0, m, T).tolist()
    ref = hmm_brute_loglik(model.transition, model.emission, model.initial, obs)
    assert abs(forward_loglik(model, obs) - ref) <= 1e-12 * max(1.0, abs(ref))


def test_forward_symbol_range():
    with pytest.raises(SymbolOutOfRange):
        forward_loglik(PLANTED, [0, 1, 3])
    assert forward_loglik(PLANTED, []) == 0.0


def test_one_state_fit_gives_symbol_frequencies():
    obs = [0, 1, 1, 2, 2, 2, 0, 1]
    init = HmmModel([[1.0]], [[0.6, 0.2, 0.2]], [1.0])
    fit, trace = baum_welch(obs, init, max_iter=1)
    np.testing.assert_allclose(fit.emission[0], [2 / 8, 3 / 8, 3 / 8], rtol=1e-14)
    assert trace[1] >= trace[0]


def test_fixed_point_returns_init():
    obs = [0, 1, 1, 2, 2, 2, 0, 1]
    init = HmmModel([[1.0]], [[2 / 8, 3 / 8, 3 / 8]], [1.0])
    fit, trace = baum_welch(obs, init)
    np.testing.assert_allclose(fit.emission, init.emission, atol=1e-15)
    assert len(trace) == 2
    assert trace[1] == pytest.approx(trace[0], abs=1e-12)


def test_baum_welch_too_short():
    with pytest.raises(TooShort):
        baum_welch([1], PLANTED)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_trace_monotone_and_stochastic(seed):
    rng = np.random.default_rng(seed)
    _, obs = sample(PLANTED, 300, seed)
    fit, trace = baum_welch(obs, _random_model(rng, 3, 3), max_iter=50, tol=0.0)
    assert np.all(np.diff(trace) >= -1e-9)
    for M in (fit.transition, fit.emission):
        assert np.all(M >= 0) and np.all(M <= 1)
        np.testing.assert_allclose(M.sum(axis=1), 1.0, atol=1e-10)
    assert forward_loglik(fit, obs) == pytest.approx(trace[-1], abs=1e-9)


def test_planted_recovery():
    _, obs = sample(PLANTED, 10_000, seed=42)
    fit, trace = baum_welch(obs, initial_model(obs), max_iter=500, tol=1e-8)
    perm, err = best_permutation(fit.transition, PLANTED.transition)
    assert err <= 0.1
    assert np.all(np.diff(trace) >= -1e-9)


def test_initial_model():
    obs = [0, 0, 1, 2, 2, 1]
    m = initial_model(obs)
    np.testing.assert_array_equal(m.transition, mle_transition(obs, 3))
    np.testing.assert_allclose(np.diag(m.emission), 0.9 + 0.1 / 3)
    np.testing.assert_allclose(m.initial, 1 / 3)


def test_viterbi_deterministic_emissions():
    model = HmmModel(np.full((3, 3), 1 / 3), [[0, 0, 1], [1, 0, 0], [0, 1, 0]], np.full(3, 1 / 3))
    obs = [0, 2, 1, 1, 0]
    inverse = {2: 0, 0: 1, 1: 2}
    assert viterbi(model, obs) == [inverse[o] for o in obs]


@settings(max_examples=60)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 3), st.integers(1, 5))
def test_viterbi_matches_enumeration(seed, n, m, T):
    rng = np.random.default_rng(seed)
    model = _random_model(rng, n, m)
    obs = rng.integers(0, m, T).tolist()
    _, best_p = hmm_brute_viterbi(model.transition, model.emission, model.initial, obs)
    path = viterbi(model, obs)
    p = hmm_path_prob(model.transition, model.emission, model.initial, obs, path)
    assert p == pytest.approx(best_p, rel=1e-12)


def test_viterbi_ties_go_low():
    model = HmmModel(np.full((2, 2), 0.5), np.full((2, 2), 0.5), [0.5, 0.5])
    assert viterbi(model, [0, 1, 1]) == [0, 0, 0]
    assert viterbi(model, []) == []


def test_sample_is_seeded():
    a = sample(PLANTED, 50, 3)
    b = sample(PLANTED, 50, 3)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_best_permutation():
    P = np.array([[0.9, 0.1, 0.0], [0.2, 0.5, 0.3], [0.0, 0.4, 0.6]])
    perm = [2, 0, 1]
    shuffled = np.empty_like(P)
    for i, j in itertools.product(range(3), range(3)):
        shuffled[perm[i], perm[j]] = P[i, j]
    p, err = best_permutation(shuffled, P)
    assert err == 0.0
    np.testing.assert_array_equal(shuffled[np.ix_(p, p)], P)
