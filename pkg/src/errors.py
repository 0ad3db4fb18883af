"""
Exception hierarchy for the particle filtering toolkit.

Every error raised on purpose by the package derives from PmmhFiltersError,
so the CLI can map failures onto its exit codes in one place.
"""


class PmmhFiltersError(Exception):
    """Base class for all package errors."""

    exit_code = 1


# ============================================================================
# Configuration Errors (exit code 2)
# ============================================================================


class ConfigError(PmmhFiltersError, ValueError):
    """Inconsistent or incomplete experiment configuration."""

    exit_code = 2


class UnsupportedModelError(ConfigError):
    """A filter was requested for a model it cannot handle (e.g. FAPF outside LG)."""


# ============================================================================
# Data Errors (exit code 3)
# ============================================================================


class DataError(PmmhFiltersError, ValueError):
    """Malformed or non-finite input data."""

    exit_code = 3


class MeasurementDomainError(DataError):
    """An observation or measurement error lies outside the model's supported domain."""


# ============================================================================
# Numerical Errors (exit code 4)
# ============================================================================


class NumericalError(PmmhFiltersError, ArithmeticError):
    """A numerical procedure failed to produce a usable result."""

    exit_code = 4


class DegeneracyError(NumericalError):
    """All particle weights are zero."""


class DegenerateMomentsError(NumericalError):
    """A Gaussian approximation ended up with a non-positive variance."""


class SigmaPointError(NumericalError):
    """The sigma-point moment system is singular."""


class CalibrationError(NumericalError):
    """Every calibration replicate produced a degenerate likelihood estimate."""


class GridCoverageError(NumericalError):
    """A realized value falls outside the predictive density grid."""
