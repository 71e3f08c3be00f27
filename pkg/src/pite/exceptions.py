"""Exception hierarchy shared across the package."""


class PITEError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PITEError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(PITEError, ArithmeticError):
    """A computation produced a non-finite value."""


class ConfigError(PITEError, ValueError):
    """A configuration object violates its invariants."""


class SplitError(PITEError, ValueError):
    """A dataset split would be empty."""


class ParseError(PITEError, ValueError):
    """A data file could not be parsed.

    ``row`` is the 1-based data row (header excluded) and ``column`` the
    column name, when the failure can be located.
    """

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class GroundTruthUnavailableError(PITEError, ValueError):
    """Potential outcomes are required but were not supplied."""


class SingleGroupError(PITEError, ValueError):
    """Only one treatment group is present where both are required."""


class UsageError(PITEError, RuntimeError):
    """An API was called in the wrong state or with the wrong kind of data."""


class TrainingError(PITEError, RuntimeError):
    """Training diverged."""

    def __init__(self, message, epoch=None):
        if epoch is not None:
            message = f"{message} at epoch {epoch}"
        super().__init__(message)
        self.epoch = epoch
