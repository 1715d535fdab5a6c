"""Exception types shared across the package."""


class IleError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(IleError, ValueError):
    """Operand extents do not agree."""


class ShapeError(IleError, ValueError):
    """A tensor has the wrong rank or size for the requested operation."""


class NumericError(IleError, FloatingPointError):
    """An operation produced or received a NaN or infinite value."""


class SingularityError(IleError, ArithmeticError):
    """A linear system could not be factorized."""


class ConfigError(IleError, ValueError):
    """Invalid or missing configuration."""


class FormatError(IleError, ValueError):
    """A binary container failed validation on read."""
