"""Exception and warning types raised across the package."""


class AfregError(ValueError):
    """Base class for all package errors."""


# market data
class MissingValue(AfregError):
    def __init__(self, row, col):
        super().__init__(f"missing value at row {row}, column {col}")
        self.row = row
        self.col = col


class NonMonotoneDates(AfregError):
    pass


class DuplicateDate(AfregError):
    pass


class MalformedNumber(AfregError):
    pass


class TooFewMaturities(AfregError):
    pass


class EmptyWindow(AfregError):
    pass


# factor basis
class NonPositiveMaturity(AfregError):
    pass


class DimensionMismatch(AfregError):
    pass


class MaturityBeforeValuation(AfregError):
    pass


class RankDeficient(AfregError):
    pass


class TooFewObservations(AfregError):
    pass


# dynamics / state estimation
class DegeneratePath(AfregError):
    pass


class NonStationaryEstimate(UserWarning):
    """Fitted one-step transition has spectral radius >= 1 or was clamped."""


class SingularInnovationCovariance(AfregError):
    pass


# regularization / estimation
class EmptyGrid(AfregError):
    pass


class SingularNormalEquations(AfregError):
    pass


class InsufficientData(AfregError):
    pass


# mispricing
class EmptyHistory(AfregError):
    pass


class MisalignedHistory(AfregError):
    pass


class EmptyInput(AfregError):
    pass


# hmm
class TooShort(AfregError):
    pass


class SymbolOutOfRange(AfregError):
    pass


# backtest
class NoCandidates(AfregError):
    pass


class MisalignedSeries(AfregError):
    pass


class EmptyReturns(AfregError):
    pass


class EmptyLedger(AfregError):
    pass


# stats
class Degenerate(AfregError):
    pass


class InvalidCounts(AfregError):
    pass


class TooFew(AfregError):
    pass
