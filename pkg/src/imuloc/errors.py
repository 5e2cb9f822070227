"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so raise the most specific
class available.
"""


class ImulocError(Exception):
    """Base class for all package errors."""


class ConfigError(ImulocError):
    """Invalid or inconsistent run configuration."""


class DataError(ImulocError):
    """Missing, malformed, or unreadable dataset artifacts."""


class CompatibilityError(ImulocError):
    """Checkpoint, dataset, and config do not belong together."""


class ShapeMismatchError(ImulocError):
    """Tensor op received inputs with incompatible shapes."""


class UnknownOpError(ImulocError):
    """Tensor op id is not in the catalog."""
