"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError -> 2, NumericError -> 3.
"""


class DilsegError(Exception):
    """Base class for all package errors."""


class ConfigError(DilsegError):
    """Invalid configuration file, key, or value."""


class DataError(DilsegError):
    """Malformed or inconsistent raster / label / weight files."""


class NumericError(DilsegError):
    """Numerical failure (divergence, failed gradient check)."""
