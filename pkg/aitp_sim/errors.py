"""Exception types raised across the simulator."""

from __future__ import annotations


class AitpError(Exception):
    """Base class for every error the simulator raises on purpose."""


class ParseError(AitpError):
    """Raised when a scenario or checkpoint file cannot be parsed."""


class ValidationError(AitpError):
    """Raised when a scenario value violates an invariant."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DomainError(AitpError, ValueError):
    """Raised when a numeric argument is outside the domain of a formula."""


class DivergenceError(AitpError):
    """Raised when local training produces a non-finite loss."""


class DropoutError(AitpError):
    """Raised when masked updates are missing members of the masking roster."""

    def __init__(self, missing_ids: list[int]):
        self.missing_ids = sorted(missing_ids)
        super().__init__(f"devices dropped after masking: {self.missing_ids}")


class NoAggregatorError(AitpError):
    """Raised when no aggregator is alive to combine updates."""


class UnstableQueueError(AitpError):
    """Raised when an M/M/1 queue is at or beyond its stability limit."""

    def __init__(self, rho: float):
        self.rho = rho
        super().__init__(f"queue unstable (rho={rho:.4f})")


class UnknownIdError(AitpError):
    """Raised when a failure targets a device or aggregator that does not exist."""


class OutputError(AitpError):
    """Raised when result files cannot be written."""
