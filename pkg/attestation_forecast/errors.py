"""
Exception hierarchy for the forecasting toolkit.

Library code raises these; only the CLI turns them into exit codes.
"""
from typing import Iterable, List, Optional


class ForecastToolkitError(Exception):
    """Base class for all toolkit errors."""
    exit_code = 1
    code = "error"


class ConfigError(ForecastToolkitError):
    """Invalid or missing configuration."""
    exit_code = 2
    code = "config"


class DataError(ForecastToolkitError, ValueError):
    """Input data violates a schema or panel invariant."""
    exit_code = 3
    code = "data"


class NumericalError(ForecastToolkitError, ArithmeticError):
    """Estimation or test statistic cannot be computed."""
    exit_code = 4
    code = "numerical"


# Data errors

class MissingInputError(DataError):
    code = "missing_input"

    def __init__(self, path: str):
        self.path = str(path)
        super().__init__(f"Input file not found: {self.path}")


class ParseError(DataError):
    code = "parse"


class DuplicateZipError(DataError):
    code = "duplicate_zip"


class UnknownUnitError(DataError):
    code = "unknown_unit"


class UnmappedZipError(DataError):
    code = "unmapped_zip"

    def __init__(self, zips: Iterable[str], message: Optional[str] = None):
        self.zips: List[str] = sorted(set(zips))
        super().__init__(message or f"{len(self.zips)} zip code(s) not in zip map: {', '.join(self.zips)}")


class CalendarGapError(DataError):
    code = "calendar_gap"

    def __init__(self, missing: Iterable[str], message: Optional[str] = None):
        self.missing: List[str] = sorted(set(missing))
        super().__init__(message or f"Missing census for {len(self.missing)} unit-day(s): {', '.join(self.missing)}")


class EmptyIntersectionError(DataError):
    code = "empty_intersection"


class SeriesTooShortError(DataError):
    code = "series_too_short"


class InsufficientLengthError(DataError):
    code = "insufficient_length"


class NonPositiveArgumentError(DataError):
    code = "nonpositive_argument"


class LengthMismatchError(DataError):
    code = "length_mismatch"


class AlignmentError(DataError):
    code = "alignment"


class ZeroDenominatorError(DataError):
    code = "zero_denominator"


# Numerical errors

class RankDeficiencyError(NumericalError):
    code = "rank_deficient"

    def __init__(self, column: str, message: Optional[str] = None):
        self.column = column
        super().__init__(
            message
            or (
                f"Design matrix is rank deficient: column '{column}' is linearly dependent "
                "on the others (e.g. a constant indicator series). Consider a positive "
                "log_offset or excluding the unit."
            )
        )


class UnbalancedPanelError(NumericalError):
    code = "unbalanced_panel"


class MomentConditionError(NumericalError):
    code = "moment_condition"


def with_unit_context(exc: ForecastToolkitError, unit_id: str) -> ForecastToolkitError:
    """Return a copy of ``exc`` whose message is prefixed with the unit id."""
    message = f"unit {unit_id}: {exc}"
    if isinstance(exc, RankDeficiencyError):
        return RankDeficiencyError(exc.column, message)
    if isinstance(exc, UnmappedZipError):
        return UnmappedZipError(exc.zips, message)
    if isinstance(exc, CalendarGapError):
        return CalendarGapError(exc.missing, message)
    if isinstance(exc, MissingInputError):
        return exc
    return type(exc)(message)
