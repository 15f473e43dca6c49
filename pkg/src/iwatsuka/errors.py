"""Exception types shared across the toolkit.

Configuration and admissibility problems raise :class:`ConfigError`
(CLI exit code 1); failures of a numerical contract raise
:class:`NumericalError` (CLI exit code 2).
"""


class ConfigError(ValueError):
    """Invalid configuration, schema violation, or inadmissible input."""


class AdmissibilityError(ConfigError):
    """Field or perturbation outside the admissible class."""


class CoverageError(ConfigError):
    """Measurement set does not cover the working frequency window."""


class NumericalError(RuntimeError):
    """A numerical routine failed to meet its accuracy contract."""


class WindowError(NumericalError):
    """No admissible truncation window for the requested fiber."""


class EigensolveError(NumericalError):
    """Tridiagonal eigensolver failed, stagnated, or returned degenerate data."""


class ContourError(NumericalError):
    """Contour integration hit an eigenvalue or lost accuracy."""
