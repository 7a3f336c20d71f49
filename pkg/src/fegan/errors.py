"""Exception hierarchy shared by every fegan module."""


class FeganError(Exception):
    """Base class for all package errors."""


# ingest
class DataError(FeganError):
    """Raised when input data cannot be turned into a usable series."""


class MissingColumn(DataError):
    pass


class UnparsableRow(DataError):
    def __init__(self, line, detail=""):
        self.line = line
        super().__init__(f"cannot parse line {line}" + (f": {detail}" if detail else ""))


class DuplicateDate(DataError):
    pass


class EmptyFile(DataError):
    pass


class NonPositivePrice(DataError):
    pass


class SeriesTooShort(DataError):
    pass


# risk
class EmptySample(FeganError):
    pass


class NonFiniteValue(FeganError):
    pass


class AlphaMismatch(FeganError):
    pass


# tsmodels
class TooShort(FeganError):
    pass


class NonStationaryFit(FeganError):
    pass


class OptimizerFailed(FeganError):
    pass


class PeriodTooSmall(FeganError):
    pass


# nn / gan
class ShapeMismatch(FeganError):
    pass


class NonFiniteActivation(FeganError):
    pass


class NoCachedForward(FeganError):
    pass


class ArityMismatch(FeganError):
    pass


class TrainingAborted(FeganError):
    """A training run hit a non-finite value; ``step`` is the failing step index."""

    def __init__(self, step, reason):
        self.step = step
        self.reason = reason
        super().__init__(f"training aborted at step {step}: {reason}")


class InvalidPlan(FeganError):
    pass


class NoResultsFound(FeganError):
    pass
