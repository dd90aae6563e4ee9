"""Exception hierarchy shared by every deepcat module."""


class DeepCatError(Exception):
    """Base class for all errors raised by deepcat."""


class DimensionError(DeepCatError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(DeepCatError, ValueError):
    """A value lies outside the domain of an operation (log of 0, NaN logits)."""


class UsageError(DeepCatError, RuntimeError):
    """An API was called in an invalid state, e.g. backward on a consumed tape."""


class ConfigurationError(DeepCatError, ValueError):
    """Invalid model, training or experiment configuration."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DataError(DeepCatError, ValueError):
    """Dataset contents violate a precondition (bad label, misaligned rows)."""


class FormatError(DeepCatError, ValueError):
    """A file does not follow its documented binary or text layout."""

    def __init__(self, message, offset=None, row=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.offset = offset
        self.row = row
