"""Exception hierarchy for ortho_lasso.

All failures raised by the library derive from :class:`OrthoLassoError` so the
CLI can map them onto stable exit codes:

* configuration / usage problems -> exit code 2
* input data problems            -> exit code 3
* numerical failures             -> exit code 4 (when every replication fails)
"""

from __future__ import annotations


class OrthoLassoError(Exception):
    """Base class for all package errors."""


class ConfigError(OrthoLassoError):
    """Invalid configuration or argument combination."""


class DataError(OrthoLassoError):
    """Input data is malformed (missing columns, non-numeric, wrong shape)."""


class NumericalError(OrthoLassoError):
    """A numerical procedure failed (degenerate input, singular system)."""


class NonPositiveDefiniteError(NumericalError):
    """A matrix required to be symmetric positive definite is not."""


class ZeroVarianceColumnError(NumericalError):
    """A design column has (numerically) zero variance and cannot be standardized."""

    def __init__(self, column: int, message: str | None = None) -> None:
        self.column = column
        super().__init__(message or f"column {column} has zero variance")


class ConvergenceError(NumericalError):
    """An iterative solver exhausted its iteration budget."""


class DegenerateResidualError(NumericalError):
    """A residual second moment fell below its stability floor."""


class DegenerateInputError(NumericalError):
    """Input is degenerate for the requested computation (e.g. all values equal)."""
