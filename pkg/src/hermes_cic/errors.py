"""Exception types shared across the package."""

from __future__ import annotations


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigurationError(ValueError):
    """A component was wired up in a way it cannot operate with."""


class DiagnosticInvalidError(RuntimeError):
    """A diagnostic was requested in a mode where it carries no meaning."""


class InsufficientDataError(ValueError):
    """Not enough samples to compute the requested quantity."""


class ValidationError(ValueError):
    """A message or scenario field failed validation.

    ``field`` holds the dotted path of the offending field.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class DecodeError(ValueError):
    """Raised when a wire frame cannot be parsed; ``offset`` is the byte position."""

    def __init__(self, offset: int, message: str):
        super().__init__(f"decode error at offset {offset}: {message}")
        self.offset = offset


class SimulationFault(RuntimeError):
    """Numerical fault during integration (non-finite input, divergence)."""

    def __init__(self, message: str, vehicle_id=None, time_s: float | None = None):
        super().__init__(message)
        self.vehicle_id = vehicle_id
        self.time_s = time_s


class ScenarioError(ValueError):
    """Collects every field-level problem found while parsing a scenario."""

    def __init__(self, problems: list[ValidationError]):
        self.problems = list(problems)
        lines = "; ".join(str(p) for p in self.problems)
        super().__init__(f"invalid scenario: {lines}")


class ProtocolViolation(RuntimeError):
    """A peer broke the session contract (status before subscribing, bad frame, ...)."""
