"""Exception types shared across the package.

The CLI maps each class to a fixed process exit code, so code that
raises here should pick the class by failure category, not severity:
configuration problems (bad option values, malformed config files),
data problems (unreadable images, shape mismatches, empty datasets)
and numeric failures (non-finite losses, divergence).
"""


class DsatError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DsatError):
    """Invalid configuration: bad option value, malformed file, missing key."""

    exit_code = 2


class DataError(DsatError):
    """Invalid or unusable input data."""

    exit_code = 3


class ShapeError(DataError):
    """Array argument has the wrong rank or extents."""


class NumericError(DsatError):
    """Numerical failure during optimisation or evaluation."""

    exit_code = 4
