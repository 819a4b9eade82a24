"""
Exception hierarchy for the PETC abstraction tool.

All errors derive from ValueError so callers that only know about ValueError keep working.
"""
from typing import Optional


class PETCError(ValueError):
    """Base class for every error raised by the package."""


class ConfigError(PETCError):
    """Unreadable, malformed or schema-violating configuration."""


class StructuralError(PETCError):
    """Inconsistent dimensions or degenerate geometry."""


class AssumptionViolation(PETCError):
    """The system violates a well-posedness assumption (threshold, horizon, period, controllability)."""


class NumericalDegeneracyError(PETCError):
    """A covariance matrix failed its symmetric factorization."""

    def __init__(self, message: str, min_eigenvalue: Optional[float] = None):
        """Carry the smallest eigenvalue of the offending covariance."""
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class ProbabilityUnderflowError(PETCError):
    """A rectangle probability is too small for its logarithm to be evaluated."""


class InfeasibleRowError(PETCError):
    """An interval row admits no probability distribution."""


class AbstractionError(PETCError):
    """An IMC row could not be repaired within the repair budget."""

    def __init__(self, message: str, row: Optional[str] = None):
        """Carry the label of the offending row."""
        super().__init__(message)
        self.row = row


class IMCFormatError(PETCError):
    """A serialized IMC is corrupted or inconsistent."""
