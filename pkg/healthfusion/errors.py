"""Exceptions raised by healthfusion.

Every error carries the process exit code the command line uses when it
escapes a run: 2 for configuration problems, 3 for data problems and 4 for
numeric failures.
"""
from typing import Optional


class HealthFusionError(Exception):
    """Base class of all healthfusion errors.

    Args:
        message (str): human readable description.
        stage (str): pipeline stage the error surfaced in, if known.

    Examples:
        >>> str(HealthFusionError("boom"))
        'boom'
        >>> str(HealthFusionError("boom", stage="load"))
        '[load] boom'
    """

    exit_code = 1

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.stage = stage

    def __str__(self) -> str:
        if self.stage:
            return f"[{self.stage}] {self.message}"
        return self.message


class ConfigError(HealthFusionError):
    """Invalid or incomplete configuration."""

    exit_code = 2


class OutputExistsError(ConfigError):
    """Output directory exists and is not empty."""


class DataError(HealthFusionError):
    """Input data violates a precondition."""

    exit_code = 3


class DataFormatError(DataError):
    """Unparseable or non-finite input."""


class DuplicateIdError(DataError):
    """Missing or repeated sample id."""


class SchemaError(DataError):
    """Feature names or shapes do not match."""


class AlignmentError(DataError):
    """Views are not aligned on identical sample ids."""


class EmptyCohortError(DataError):
    """No subject is left."""


class InsufficientSamplesError(DataError):
    """Too few samples for the requested computation."""


class MissingAllViewsError(DataError):
    """A sample observes none of the views."""


class MissingViewUnsupportedError(DataError):
    """The integration method cannot handle a missing view."""


class DateOrderError(DataError):
    """Dates are in an impossible order."""


class DegenerateLabelsError(DataError):
    """Only one class is present."""


class NoEventsError(DataError):
    """Survival data without any event."""


class EmptyInputError(DataError):
    """Empty input matrix."""


class StratificationError(DataError):
    """A stratum is too small for the requested split."""


class NumericError(HealthFusionError):
    """A numeric procedure cannot produce a result."""

    exit_code = 4


class DegenerateDataError(NumericError):
    """Data without any variance."""


class RankError(NumericError):
    """Requested rank is not attainable."""


class NoComparablePairsError(NumericError):
    """Concordance index without any comparable pair."""


class AllTiedError(NumericError):
    """Paired test where every difference is zero."""
