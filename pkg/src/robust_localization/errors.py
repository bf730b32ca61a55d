"""
Exception hierarchy for robust localization.
"""

from typing import Optional


class LocalizationError(Exception):
    """Base class for all errors raised by the package."""


class TopologyError(LocalizationError):
    """Topology is malformed, disconnected or has no anchor link."""


class GenerationError(LocalizationError):
    """Random instance generation exhausted its retry limit."""

    def __init__(self, predicate: str, attempts: int):
        super().__init__(
            f"no valid instance after {attempts} attempts (failed predicate: {predicate})"
        )
        self.predicate = predicate
        self.attempts = attempts


class ConfigurationError(LocalizationError):
    """Invalid configuration value or fault specification."""


class FeasibilityError(LocalizationError):
    """A stacked point lies outside the constraint set Z."""


class DivergenceError(LocalizationError):
    """A solver produced non-finite values."""

    def __init__(self, iteration: int, detail: Optional[str] = None):
        message = f"non-finite values at iteration {iteration}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)
        self.iteration = iteration


class ShapeMismatchError(LocalizationError, ValueError):
    """Array shapes do not match the topology."""


class DomainError(LocalizationError, ValueError):
    """Argument outside the mathematical domain of an operation."""
