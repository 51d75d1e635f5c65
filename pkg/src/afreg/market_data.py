"""Panels of observed rates on a fixed maturity grid: CSV I/O, validation, slicing."""

from __future__ import annotations

import csv
import datetime as _dt
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DuplicateDate,
    EmptyWindow,
    MalformedNumber,
    MissingValue,
    NonMonotoneDates,
    TooFewMaturities,
)

FORWARD = "forward"
ZERO_YIELD = "zero_yield"
QUOTE_KINDS = (FORWARD, ZERO_YIELD)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CurvePanel:
    """Date-indexed matrix of continuously-compounded rates (decimals).

    ``rates[i, j]`` is the rate observed on ``dates[i]`` for time-to-maturity
    ``maturities[j]`` (years).
    """

    dates: tuple
    maturities: np.ndarray
    rates: np.ndarray
    quote_kind: str = FORWARD

    def __post_init__(self):
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "maturities", _frozen(self.maturities))
        object.__setattr__(self, "rates", _frozen(self.rates))
        _validate(self)

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    @property
    def n_maturities(self) -> int:
        return len(self.maturities)

    def times(self, dt: float = 1 / 252) -> np.ndarray:
        """Year fractions since the first row, counting one ``dt`` per row."""
        return np.arange(self.n_dates) * dt

    def __eq__(self, other):
        if not isinstance(other, CurvePanel):
            return NotImplemented
        return (
            self.dates == other.dates
            and self.quote_kind == other.quote_kind
            and np.array_equal(self.maturities, other.maturities)
            and np.array_equal(self.rates, other.rates)
        )

    def __len__(self):
        return self.n_dates


def _validate(panel: CurvePanel) -> None:
    if panel.quote_kind not in QUOTE_KINDS:
        raise ValueError(f"unknown quote_kind {panel.quote_kind!r}")
    m = panel.maturities
    if m.ndim != 1 or len(m) < 1:
        raise TooFewMaturities("panel needs at least one maturity")
    if np.any(m <= 0) or np.any(np.diff(m) <= 0):
        raise ValueError("maturities must be positive and strictly increasing")
    if len(panel.dates) < 1:
        raise EmptyWindow("panel has no dates")
    if panel.rates.shape != (len(panel.dates), len(m)):
        raise ValueError(
            f"rates shape {panel.rates.shape} does not match "
            f"{len(panel.dates)} dates x {len(m)} maturities"
        )
    bad = np.argwhere(~np.isfinite(panel.rates))
    if len(bad):
        raise MissingValue(int(bad[0, 0]), int(bad[0, 1]))
    for i in range(1, len(panel.dates)):
        if panel.dates[i] == panel.dates[i - 1]:
            raise DuplicateDate(f"duplicate date {panel.dates[i]}")
        if panel.dates[i] < panel.dates[i - 1]:
            raise NonMonotoneDates(f"date {panel.dates[i]} follows {panel.dates[i - 1]}")


@dataclass(frozen=True)
class PanelSchema:
    quote_kind: str = FORWARD
    rates_in_percent: bool = False


def _parse_float(text: str, row: int, col: int) -> float:
    text = text.strip()
    if text == "":
        raise MissingValue(row, col)
    try:
        value = float(text)
    except ValueError:
        raise MalformedNumber(f"cannot parse {text!r} at row {row}, column {col}") from None
    if not np.isfinite(value):
        raise MalformedNumber(f"non-finite value {text!r} at row {row}, column {col}")
    return value


def load_panel(path, schema: PanelSchema = PanelSchema()) -> CurvePanel:
    """Read a ``date,<m1>,<m2>,...`` CSV file into a validated panel.

    Row and column indices in errors are 0-based data indices (the header
    and the date column are not counted).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyWindow(f"{path}: empty file") from None
        if len(header) < 2:
            raise TooFewMaturities(f"{path}: header declares no maturities")
        maturities = []
        for j, cell in enumerate(header[1:]):
            try:
                maturities.append(float(cell))
            except ValueError:
                raise MalformedNumber(f"bad maturity {cell!r} in header") from None
        dates, rows = [], []
        for i, rec in enumerate(reader):
            if not rec or all(c.strip() == "" for c in rec):
                continue
            try:
                d = _dt.date.fromisoformat(rec[0].strip())
            except ValueError:
                raise MalformedNumber(f"bad date {rec[0]!r} at row {i}") from None
            cells = rec[1:] + [""] * (len(maturities) - len(rec) + 1)
            if len(cells) > len(maturities):
                raise MalformedNumber(f"row {i} has {len(rec) - 1} values, expected {len(maturities)}")
            rows.append([_parse_float(c, i, j) for j, c in enumerate(cells)])
            dates.append(d)
    if not rows:
        raise EmptyWindow(f"{path}: no data rows")
    rates = np.array(rows, dtype=float)
    if schema.rates_in_percent:
        rates = rates / 100.0
    return CurvePanel(dates, maturities, rates, schema.quote_kind)


def _fmt_maturity(m: float) -> str:
    return str(int(m)) if float(m).is_integer() else repr(float(m))


def write_panel(panel: CurvePanel, path) -> None:
    """Write a panel in the CSV format read by :func:`load_panel`.

    Values use the shortest round-trip representation, so reading the file
    back reproduces the panel bit for bit.
    """
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date"] + [_fmt_maturity(m) for m in panel.maturities])
        for d, row in zip(panel.dates, panel.rates):
            w.writerow([d.isoformat()] + [repr(float(x)) for x in row])


def to_forward_rates(panel: CurvePanel) -> CurvePanel:
    """Convert zero yields to instantaneous forwards, f(T) = d/dT [T y(T)].

    Second-order central differences on the (possibly uneven) grid in the
    interior, one-sided first-order differences at the two end knots.
    Forward panels are returned unchanged.
    """
    if panel.quote_kind == FORWARD:
        return panel
    if panel.n_maturities < 2:
        raise TooFewMaturities("need at least two maturities to differentiate")
    T = panel.maturities
    fwd = np.gradient(panel.rates * T, T, axis=1, edge_order=1)
    return CurvePanel(panel.dates, T, fwd, FORWARD)


def window(panel: CurvePanel, start, end) -> CurvePanel:
    """Rows with ``start <= date <= end``."""
    if start > end:
        raise ValueError("window start after end")
    idx = [i for i, d in enumerate(panel.dates) if start <= d <= end]
    if not idx:
        raise EmptyWindow(f"no dates between {start} and {end}")
    return CurvePanel(
        [panel.dates[i] for i in idx], panel.maturities, panel.rates[idx], panel.quote_kind
    )


def slice_rows(panel: CurvePanel, rows: Sequence[int] | slice) -> CurvePanel:
    """Positional row slice."""
    idx = np.arange(panel.n_dates)[rows]
    if len(idx) == 0:
        raise EmptyWindow("empty row selection")
    return CurvePanel(
        [panel.dates[i] for i in idx], panel.maturities, panel.rates[idx], panel.quote_kind
    )


def business_dates(start: _dt.date, n: int) -> list:
    """``n`` consecutive weekdays starting at ``start`` (rolled forward)."""
    out = []
    d = start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += _dt.timedelta(days=1)
    return out
