"""Pairs strategy on mispricing states, buy-and-hold benchmarks, self-financing ledgers, risk metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .basis import NsBasisSpec, bond_price
from .errors import EmptyLedger, EmptyReturns, MisalignedSeries, NoCandidates
from .mispricing import PairState

ES_LEVELS = (0.5, 0.9, 0.95, 0.99, 0.999)


@dataclass(frozen=True)
class StrategyConfig:
    initial_capital: float = 1_000_000.0
    trade_units: float = 1.0
    allow_short: bool = True
    nonneg_value_floor: bool = True

    def __post_init__(self):
        if not self.initial_capital > 0 or not self.trade_units > 0:
            raise ValueError("initial capital and trade units must be positive")


@dataclass(frozen=True)
class Trade:
    step: int
    instrument: str
    units: float
    price: float


@dataclass
class PortfolioLedger:
    """Per-step cash, holdings and marked wealth of a frictionless portfolio.

    ``positions[t]`` and ``prices[t]`` are the holdings after trading at
    step ``t`` and the prices they are marked at. ``carry_prices[t]`` is the
    step-``t`` price of whatever was held coming into ``t`` (it differs from
    ``prices[t]`` only when a bond is rolled at maturity).
    """

    timestamps: list
    instruments: tuple
    cash: np.ndarray
    positions: np.ndarray
    prices: np.ndarray
    carry_prices: np.ndarray
    wealth: np.ndarray
    trades: list = field(default_factory=list)
    initial_capital: float = 0.0

    def __len__(self):
        return len(self.timestamps)

    def self_financing_residuals(self) -> np.ndarray:
        """wealth_t - wealth_{t-1} - positions_{t-1} . (carry_t - price_{t-1})."""
        gains = np.sum(self.positions[:-1] * (self.carry_prices[1:] - self.prices[:-1]), axis=1)
        return np.diff(self.wealth) - gains

    def active(self) -> np.ndarray:
        """True at step t when something was held over (t-1, t]."""
        held = np.any(self.positions != 0, axis=1)
        out = np.zeros(len(self), dtype=bool)
        out[1:] = held[:-1]
        return out

    def returns(self) -> np.ndarray:
        """Simple wealth returns per step; zero when nothing was held."""
        r = np.zeros(len(self))
        act = self.active()
        prev = self.wealth[:-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(prev != 0, np.diff(self.wealth) / prev, 0.0)
        r[1:] = np.where(act[1:], step, 0.0)
        return r

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", "cash"] + [f"position_{n}" for n in self.instruments] + ["wealth"])
            for i, ts in enumerate(self.timestamps):
                stamp = ts.isoformat() if hasattr(ts, "isoformat") else str(ts)
                w.writerow([stamp, repr(float(self.cash[i]))]
                           + [repr(float(x)) for x in self.positions[i]]
                           + [repr(float(self.wealth[i]))])


def _stamps(timestamps, n):
    if timestamps is None:
        return list(range(n))
    if len(timestamps) != n:
        raise MisalignedSeries("timestamps do not match the price series")
    return list(timestamps)


def run_pairs_strategy(
    prices,
    states: Sequence[PairState],
    config: StrategyConfig = StrategyConfig(),
    timestamps=None,
    names: tuple = ("Ta", "Tb"),
) -> PortfolioLedger:
    """Short T_a / long T_b by K units on ``A_GREATER_B`` when flat; close on
    ``A_LESS_B`` once both prices are above their entry prices.

    With ``nonneg_value_floor`` an entry is skipped if its worst-case loss
    K (1 - P_a + P_b) (short leg rising to par, long leg falling to zero)
    exceeds current wealth. Without ``allow_short`` only the long leg is traded.
    """
    P = np.atleast_2d(np.asarray(prices, dtype=float))
    n = P.shape[0]
    if P.shape[1] != 2 or len(states) != n:
        raise MisalignedSeries("need an (n, 2) price array and one state per row")
    if n == 0:
        raise MisalignedSeries("empty price series")
    stamps = _stamps(timestamps, n)
    K = config.trade_units
    cash = config.initial_capital
    pos = np.zeros(2)
    entry = None
    cash_s, pos_s, wealth_s, trades = np.empty(n), np.empty((n, 2)), np.empty(n), []
    for t in range(n):
        p = P[t]
        wealth = cash + pos @ p
        st = states[t]
        if entry is None and st is PairState.A_GREATER_B:
            target = np.array([-K if config.allow_short else 0.0, K])
            worst = K * ((1.0 - p[0]) if config.allow_short else 0.0) + K * p[1]
            if not (config.nonneg_value_floor and worst > wealth):
                cash -= target @ p
                pos = target
                entry = p.copy()
                trades += [Trade(t, names[i], target[i], p[i]) for i in range(2) if target[i] != 0]
        elif entry is not None and st is PairState.A_LESS_B and p[1] > entry[1] and p[0] > entry[0]:
            cash += pos @ p
            trades += [Trade(t, names[i], -pos[i], p[i]) for i in range(2) if pos[i] != 0]
            pos = np.zeros(2)
            entry = None
        cash_s[t] = cash
        pos_s[t] = pos
        wealth_s[t] = cash + pos @ p
    return PortfolioLedger(stamps, tuple(names), cash_s, pos_s, P.copy(), P.copy(), wealth_s, trades, config.initial_capital)


def run_buy_and_hold(
    pricer: Callable[[int, float], float],
    maturity: float,
    n_steps: int,
    config: StrategyConfig = StrategyConfig(),
    dt: float = 1.0 / 252.0,
    timestamps=None,
) -> PortfolioLedger:
    """Invest everything in a ``maturity``-year zero and roll into a fresh one when it matures.

    ``pricer(i, tau)`` is the step-``i`` price of a zero with ``tau`` years
    left; a matured bond pays 1.
    """
    if n_steps < 1:
        raise MisalignedSeries("need at least one step")
    if not maturity > 0:
        raise ValueError("maturity must be positive")
    stamps = _stamps(timestamps, n_steps)
    steps_per_bond = max(1, int(round(maturity / dt)))
    cash_s, pos_s, wealth_s = np.zeros(n_steps), np.empty((n_steps, 1)), np.empty(n_steps)
    price_s, carry_s = np.empty((n_steps, 1)), np.empty((n_steps, 1))
    trades = []
    p0 = pricer(0, maturity)
    units = config.initial_capital / p0
    age = 0
    trades.append(Trade(0, f"{maturity:g}y", units, p0))
    price_s[0] = carry_s[0] = p0
    for t in range(n_steps):
        if t > 0:
            age += 1
            left = (steps_per_bond - age) * dt
            carry = 1.0 if age >= steps_per_bond else pricer(t, left)
            carry_s[t] = price_s[t] = carry
            if age >= steps_per_bond:
                fresh = pricer(t, maturity)
                proceeds = units * carry
                trades.append(Trade(t, f"{maturity:g}y", -units, carry))
                units = proceeds / fresh
                trades.append(Trade(t, f"{maturity:g}y", units, fresh))
                price_s[t] = fresh
                age = 0
        pos_s[t] = units
        wealth_s[t] = units * price_s[t, 0]
    return PortfolioLedger(stamps, (f"{maturity:g}y",), cash_s, pos_s, price_s, carry_s, wealth_s, trades, config.initial_capital)


def curve_pricer(spec: NsBasisSpec, betas) -> Callable[[int, float], float]:
    """Zero-coupon prices from the step-``i`` factor curve."""
    B = np.atleast_2d(np.asarray(betas, dtype=float))
    return lambda i, tau: bond_price(spec, B[i], 0.0, tau)


def pair_prices(spec: NsBasisSpec, betas, pair) -> np.ndarray:
    price = curve_pricer(spec, betas)
    return np.array([[price(i, pair[0]), price(i, pair[1])] for i in range(len(betas))])


def pair_score(transition) -> float:
    """Sum of squared off-diagonal transition probabilities."""
    P = np.asarray(transition, dtype=float)
    return float(np.sum(P**2) - np.sum(np.diag(P) ** 2))


def select_pair(candidates, transition_matrices: dict) -> tuple:
    """Pair whose transition matrix has the largest off-diagonal mass; ties go to the smallest pair."""
    scored = [(tuple(c), pair_score(transition_matrices[tuple(c)])) for c in candidates if tuple(c) in transition_matrices]
    if not scored:
        raise NoCandidates("no candidate pair has a transition matrix")
    best = max(s for _, s in scored)
    return min(c for c, s in scored if s == best)


def expected_shortfall(returns, level: float) -> float:
    """Mean of the worst ceil((1 - level) n) losses, losses being negated returns."""
    r = np.asarray(returns, dtype=float).reshape(-1)
    if r.size == 0:
        raise EmptyReturns("no returns")
    if not 0.0 <= level < 1.0:
        raise ValueError("level must lie in [0, 1)")
    losses = np.sort(-r)[::-1]
    k = max(1, math.ceil((1.0 - level) * r.size - 1e-9))
    return float(np.mean(losses[:k]))


@dataclass
class MetricsRow:
    name: str
    terminal_wealth: float
    min_excess: float
    max_excess: float
    es: dict
    prop_active: float

    def as_list(self) -> list:
        return [self.name, self.terminal_wealth, self.min_excess, self.max_excess] + [
            self.es[lv] for lv in sorted(self.es)
        ] + [self.prop_active]


def metrics_header(levels=ES_LEVELS) -> list:
    return ["strategy", "terminal_wealth", "min_excess", "max_excess"] + [f"es_{lv:g}" for lv in levels] + ["prop_active"]


def portfolio_metrics(ledger: PortfolioLedger, name: str = "", levels=ES_LEVELS) -> MetricsRow:
    if len(ledger) == 0:
        raise EmptyLedger("ledger has no steps")
    excess = ledger.wealth - ledger.initial_capital
    rets = ledger.returns()
    held = np.any(ledger.positions != 0, axis=1)
    return MetricsRow(
        name,
        float(ledger.wealth[-1]),
        float(excess.min()),
        float(excess.max()),
        {lv: expected_shortfall(rets, lv) for lv in levels},
        float(held.mean()),
    )


def write_metrics_csv(rows, path, levels=ES_LEVELS) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(metrics_header(levels))
        for r in rows:
            w.writerow([r.name] + [repr(float(x)) for x in r.as_list()[1:]])
