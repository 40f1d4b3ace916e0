"""Exception and warning types shared across the package."""


class CoarseBindError(Exception):
    """Base class for all errors raised by coarsebind."""


class InputError(CoarseBindError, ValueError):
    """An argument violates a documented precondition."""


class FormatError(CoarseBindError, ValueError):
    """A serialized file could not be parsed.

    ``offset`` is the byte position where parsing failed, or ``None`` when the
    failure is structural (e.g. a missing key) rather than positional.
    """

    def __init__(self, message, offset=None):
        self.offset = offset
        where = f" (byte {offset})" if offset is not None else ""
        super().__init__(f"{message}{where}")


class NumericError(CoarseBindError, ArithmeticError):
    """A computation produced non-finite values or hit a singular system."""


class ConfigError(CoarseBindError, ValueError):
    """Incompatible configuration, e.g. a checkpoint/complex shape mismatch."""


class DivergenceError(CoarseBindError, RuntimeError):
    """Training loss stayed far above its initial value for too long."""


class CoarseBindWarning(UserWarning):
    """Raised through ``warnings`` for soft conditions the caller should know about."""
