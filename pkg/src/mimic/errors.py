"""
Exception hierarchy for Mimic Explorer
"""

from typing import Any, Optional


class MimicError(Exception):
    """Base error carrying the offending field and value."""

    exit_code = 3

    def __init__(self, message: str, field: Optional[str] = None,
                 value: Optional[Any] = None):
        self.message = message
        self.field = field
        self.value = value
        super().__init__(self.message)


class UsageError(MimicError):
    """Bad command line or missing input."""

    exit_code = 1


class DataError(MimicError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class InvariantViolation(MimicError):
    """An internal invariant did not hold."""

    exit_code = 3


class ConfigValidationError(DataError):
    """Configuration validation error."""


class TraceError(DataError):
    """Raw trace cannot be turned into an interaction flow."""


class SimError(DataError):
    """Simulated app rejected an input or has an invalid spec."""


class CheckpointError(DataError):
    """Checkpoint file is corrupt or incompatible."""


class ShapeError(InvariantViolation):
    """Array shapes do not agree."""


class EncodingError(InvariantViolation):
    """UI state or action could not be mapped onto the raster grid."""


class NonFiniteGradientError(InvariantViolation):
    """A gradient contained NaN or infinity; the update was skipped."""
