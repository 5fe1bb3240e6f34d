"""Exception types shared across the package."""


class ToydiffError(Exception):
    """Base class for all package errors."""


class ConfigError(ToydiffError, ValueError):
    """Invalid parameter, configuration value, or unknown label/preset."""


class ShapeError(ToydiffError, ValueError):
    """Operand shapes incompatible for a tensor primitive."""


class NumericError(ToydiffError, ArithmeticError):
    """A computation produced a non-finite value."""


class StaleTapeError(ToydiffError, RuntimeError):
    """A tape was used after it had been cleared (tapes are single-use)."""


class DegenerateDirectionError(ToydiffError, ValueError):
    """A guidance direction collapsed to the zero vector."""


class DivergenceError(ToydiffError, RuntimeError):
    """Training loss became non-finite or exceeded the divergence bound."""

    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step


class FormatError(ToydiffError, ValueError):
    """Malformed binary file. Carries the byte offset of the failure."""

    def __init__(self, offset, message):
        super().__init__(f"byte {offset}: {message}")
        self.offset = offset
