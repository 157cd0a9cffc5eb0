from typing import Optional

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class VolFilterError(Exception):
    """Base class for all errors raised by the filter package."""
    exit_code: int = EXIT_DATA


class ConfigError(VolFilterError):
    """Invalid run configuration."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidModelError(VolFilterError):
    """Chain or market model violates its invariants."""


class VolFloorError(InvalidModelError):
    """A volatility value is below the configured floor."""


class InvalidStatsError(VolFilterError):
    """Segment statistics with non-positive variance or invalid weight."""


class InvalidPathError(VolFilterError):
    """Chain path does not cover the requested interval."""


class TickDataError(VolFilterError):
    """Malformed tick or trajectory file."""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class TableError(VolFilterError):
    """Base class for structure table errors."""


class TableTooLargeError(TableError):
    """Requested table exceeds the configured cell cap."""


class CorruptTableError(TableError):
    """Table file cannot be decoded."""


class TableVersionError(TableError):
    """Table file was written by an incompatible format version."""


class ModelHashMismatchError(TableError):
    """Table was built for a different model."""


class HorizonExceededError(VolFilterError):
    """Query time lies beyond the table horizon."""


class PolicyError(VolFilterError):
    """Unknown observation policy or an operation the policy does not support."""


class NumericDegeneracyError(VolFilterError):
    """Numerical degeneracy that no fallback can absorb."""
    exit_code = EXIT_NUMERIC


class DegenerateDenominatorError(NumericDegeneracyError):
    """Tail mass of the next arrival is not positive."""


class DegenerateLikelihoodError(NumericDegeneracyError):
    """All tick likelihoods evaluated to zero."""


class ConservationError(NumericDegeneracyError):
    """The inter-tick vector field does not conserve total mass."""


class WeightCollapseError(NumericDegeneracyError):
    """All particle weights vanished."""
