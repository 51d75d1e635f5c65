"""Discrete hidden Markov models: scaled forward pass, Baum-Welch, Viterbi."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import SymbolOutOfRange, TooShort

_ROW_TOL = 1e-10


def _stochastic(M, name) -> np.ndarray:
    M = np.atleast_2d(np.array(M, dtype=float))
    if np.any(M < 0) or np.any(M > 1) or np.any(np.abs(M.sum(axis=1) - 1.0) > _ROW_TOL):
        raise ValueError(f"{name} must be row-stochastic")
    M = M / M.sum(axis=1, keepdims=True)
    M.setflags(write=False)
    return M


@dataclass(frozen=True, eq=False)
class HmmModel:
    transition: np.ndarray
    emission: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        A = _stochastic(self.transition, "transition")
        B = _stochastic(self.emission, "emission")
        pi = _stochastic(np.reshape(self.initial, (1, -1)), "initial")[0]
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0] or pi.shape[0] != A.shape[0]:
            raise ValueError("inconsistent HMM dimensions")
        object.__setattr__(self, "transition", A)
        object.__setattr__(self, "emission", B)
        object.__setattr__(self, "initial", pi)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.emission.shape[1]

    def to_dict(self) -> dict:
        return {
            "transition": self.transition.tolist(),
            "emission": self.emission.tolist(),
            "initial": self.initial.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HmmModel":
        return cls(d["transition"], d["emission"], d["initial"])


def _symbols(obs, m: int) -> np.ndarray:
    o = np.asarray(obs, dtype=int).reshape(-1)
    if o.size and (o.min() < 0 or o.max() >= m):
        raise SymbolOutOfRange(f"symbols must lie in [0, {m})")
    return o


def mle_transition(obs, n_symbols: int) -> np.ndarray:
    """Empirical transition frequencies between consecutive symbols; unseen rows uniform."""
    o = _symbols(obs, n_symbols)
    if o.size < 2:
        raise TooShort("need at least two observations")
    counts = np.zeros((n_symbols, n_symbols))
    np.add.at(counts, (o[:-1], o[1:]), 1.0)
    rows = counts.sum(axis=1, keepdims=True)
    return np.where(rows > 0, counts / np.where(rows > 0, rows, 1.0), 1.0 / n_symbols)


def _forward(model: HmmModel, o: np.ndarray):
    """Normalized forward variables and per-step scale factors."""
    n = o.size
    A = model.transition
    emit = model.emission.T[o]
    alpha = np.empty((n, model.n_states))
    scale = np.empty(n)
    a = model.initial * emit[0]
    for t in range(n):
        if t > 0:
            a = (a @ A) * emit[t]
        s = a.sum()
        scale[t] = s
        if s > 0:
            a = a / s
        alpha[t] = a
    return alpha, scale


def forward_loglik(model: HmmModel, obs) -> float:
    o = _symbols(obs, model.n_symbols)
    if o.size == 0:
        return 0.0
    _, scale = _forward(model, o)
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(scale)))


def _backward(model: HmmModel, o: np.ndarray, scale: np.ndarray) -> np.ndarray:
    n = o.size
    A = model.transition
    weighted = model.emission.T[o] / scale[:, None]
    beta = np.empty((n, model.n_states))
    b = np.ones(model.n_states)
    beta[-1] = b
    for t in range(n - 2, -1, -1):
        b = A @ (weighted[t + 1] * b)
        beta[t] = b
    return beta


def _em_step(model: HmmModel, o: np.ndarray):
    """One EM update; also returns the log-likelihood of the input model."""
    alpha, scale = _forward(model, o)
    ll = float(np.sum(np.log(scale)))
    beta = _backward(model, o, scale)
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    # expected transition counts, summed over t
    ahead = model.emission[:, o[1:]].T * beta[1:] / scale[1:, None]
    xi = model.transition * (alpha[:-1].T @ ahead)
    trans_den = xi.sum(axis=1, keepdims=True)
    A = np.where(trans_den > 0, xi / np.where(trans_den > 0, trans_den, 1.0), model.transition)
    emis = np.zeros((model.n_states, model.n_symbols))
    for k in range(model.n_symbols):
        emis[:, k] = gamma[o == k].sum(axis=0)
    emis_den = emis.sum(axis=1, keepdims=True)
    B = np.where(emis_den > 0, emis / np.where(emis_den > 0, emis_den, 1.0), model.emission)
    return HmmModel(A, B, gamma[0]), ll


def baum_welch(obs, init: HmmModel, max_iter: int = 200, tol: float = 1e-8) -> tuple:
    """EM fit from ``init``.

    Returns ``(model, trace)`` where ``trace[0]`` is the log-likelihood of
    ``init`` and ``trace[i]`` that after ``i`` EM updates; iteration stops
    once an update improves the log-likelihood by less than ``tol``.
    """
    o = _symbols(obs, init.n_symbols)
    if o.size < 2:
        raise TooShort("need at least two observations")
    model = init
    new, ll = _em_step(model, o)
    trace = [ll]
    for _ in range(max_iter):
        model = new
        new, ll = _em_step(model, o)
        trace.append(ll)
        if ll - trace[-2] < tol:
            break
    return model, trace


def initial_model(obs, n_states: int = 3, n_symbols: int = 3, mix: float = 0.1) -> HmmModel:
    """Count-based start: symbol transition frequencies, emissions near the identity."""
    if n_states != n_symbols:
        A = np.full((n_states, n_states), 1.0 / n_states)
    else:
        A = mle_transition(obs, n_symbols)
    B = (1.0 - mix) * np.eye(n_states, n_symbols) + mix / n_symbols
    B = B / B.sum(axis=1, keepdims=True)
    return HmmModel(A, B, np.full(n_states, 1.0 / n_states))


def viterbi(model: HmmModel, obs) -> list:
    """Most probable hidden path; ties go to the lowest state index."""
    o = _symbols(obs, model.n_symbols)
    if o.size == 0:
        return []
    with np.errstate(divide="ignore"):
        logA = np.log(model.transition)
        logB = np.log(model.emission)
        delta = np.log(model.initial) + logB[:, o[0]]
    back = np.zeros((o.size, model.n_states), dtype=int)
    for t in range(1, o.size):
        cand = delta[:, None] + logA
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(model.n_states)] + logB[:, o[t]]
    path = [int(np.argmax(delta))]
    for t in range(o.size - 1, 0, -1):
        path.append(int(back[t][path[-1]]))
    return path[::-1]


def sample(model: HmmModel, n: int, seed: int) -> tuple:
    """(hidden states, symbols) of length ``n`` from a seeded generator."""
    rng = np.random.default_rng(seed)
    states = np.empty(n, dtype=int)
    symbols = np.empty(n, dtype=int)
    s = rng.choice(model.n_states, p=model.initial)
    for t in range(n):
        if t > 0:
            s = rng.choice(model.n_states, p=model.transition[s])
        states[t] = s
        symbols[t] = rng.choice(model.n_symbols, p=model.emission[s])
    return states, symbols


def best_permutation(estimated, reference) -> tuple:
    """State relabelling of ``estimated`` closest (max abs entry) to ``reference``."""
    est = np.asarray(estimated)
    ref = np.asarray(reference)
    best, best_err = None, np.inf
    for perm in itertools.permutations(range(ref.shape[0])):
        p = list(perm)
        err = np.max(np.abs(est[np.ix_(p, p)] - ref))
        if err < best_err:
            best, best_err = tuple(p), err
    return best, float(best_err)
