"""Exception types raised across the package.

Everything that signals bad input derives from :class:`InputError`, which the
CLI maps to exit code 2. Plain ``OSError`` is left alone and maps to exit 1.
"""


class SarStackError(Exception):
    """Base class for all package errors."""


class InputError(SarStackError, ValueError):
    """An argument or data value violates a precondition."""


class ValidationError(InputError):
    """A ground-truth or prediction file fails schema or reference checks."""


class ConfigurationError(InputError):
    """Ensemble or search parameters are inconsistent with the inputs."""


class FormatError(InputError):
    """A raster or image file cannot be decoded."""
