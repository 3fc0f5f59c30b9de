"""Exception and warning types raised across the package."""


class SdipeError(Exception):
    """Base class for all package errors."""


class DomainError(SdipeError, ValueError):
    """An argument lies outside the domain of a numerical function."""


class SingularDesignError(SdipeError, ValueError):
    def __init__(self, message: str, column: int | str | None = None):
        super().__init__(message)
        self.column = column


class SeparationError(SdipeError, ValueError):
    """Binary labels cannot support a logistic fit (e.g. a single class)."""


class SeparationWarning(UserWarning):
    """Logistic coefficients diverged; the returned fit was clipped."""


class CalibrationError(SdipeError, ValueError):
    """An intercept could not be bracketed for the requested target."""


class DataError(SdipeError, ValueError):
    """Base class for dataset construction and ingestion failures."""


class SchemaError(DataError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class ParseError(SchemaError):
    """A cell could not be parsed as a number."""


class InsufficientDataError(SdipeError, ValueError):
    """Too few observed rows to fit a model."""


class EstimationError(SdipeError, RuntimeError):
    def __init__(self, message: str, stratum: str | None = None):
        super().__init__(message)
        self.stratum = stratum


class UnstableBootstrapError(SdipeError, RuntimeError):
    """More than the allowed share of bootstrap resamples failed."""


class WeightDiagnosticWarning(UserWarning):
    """Mean stabilized weight fell outside the expected [0.5, 2] band."""


class ConfigError(SdipeError, ValueError):
    """Invalid run configuration."""
