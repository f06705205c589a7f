"""Exception hierarchy shared by every module of the package."""


class LgmError(Exception):
    """Base class for all package errors."""


class SchemaError(LgmError):
    """A CSV file lacks a required column."""

    def __init__(self, column, path=None):
        self.column = column
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"missing required column {column!r}{where}")


class ParseError(LgmError):
    """A CSV value cannot be parsed; ``row`` is the 1-based data row."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class DomainError(LgmError, ValueError):
    """An argument lies outside the domain of an operation."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ValidationError(LgmError):
    """Longitudinal and survival records are mutually inconsistent."""


class ConfigError(LgmError):
    """A configuration file is malformed or references unknown names."""


class NumericalError(LgmError):
    """A numerical routine broke down (indefinite matrix, overflow...)."""


class OverflowGuardError(NumericalError):
    """An exponent exceeded the overflow guard threshold."""


class ConvergenceError(NumericalError):
    """An iterative routine ran out of iterations.

    ``last`` holds the last iterate so that callers can inspect or restart.
    """

    def __init__(self, message, last=None):
        self.last = last
        super().__init__(message)


class BudgetExceededError(NumericalError):
    """The outer optimizer exhausted its evaluation budget."""

    def __init__(self, message, best=None, best_value=None):
        self.best = best
        self.best_value = best_value
        super().__init__(message)


class StageError(LgmError):
    """Wraps an error raised inside one stage of :func:`fit`."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
