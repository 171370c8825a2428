class M3etError(Exception):
    """Base class for every error raised by this project."""


class ConfigError(M3etError):
    """A configuration value is missing, out of range or inconsistent."""


class ShapeError(M3etError, ValueError):
    """Operand shapes do not agree."""


class NonFiniteError(M3etError, ArithmeticError):
    """An operation produced NaN or Inf."""


class GradientError(M3etError, RuntimeError):
    """The tape was used incorrectly (non-scalar loss, repeated backward, ...)."""
