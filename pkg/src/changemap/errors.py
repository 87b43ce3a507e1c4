"""Exception hierarchy shared by the pipeline modules."""

from __future__ import annotations


class ChangeMapError(Exception):
    """Base class for all errors raised by changemap."""


class MalformedInputError(ChangeMapError, ValueError):
    pass


class ParseError(MalformedInputError):
    """A record in an input file could not be parsed."""

    def __init__(self, message: str, record: int | str | None = None):
        self.record = record
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)


class CapacityError(ChangeMapError):
    pass


class ConfigError(ChangeMapError, ValueError):
    pass


class TrainingError(ChangeMapError):
    pass


class ConvergenceError(TrainingError):
    """SMO hit its iteration cap before reaching the KKT tolerance."""

    def __init__(self, message: str, violation: float, iterations: int):
        self.violation = violation
        self.iterations = iterations
        super().__init__(f"{message} (max KKT violation {violation:.3e} after {iterations} iterations)")


class IntegrityError(ChangeMapError):
    pass
