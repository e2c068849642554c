"""Exception types shared across the package."""


class ShapeError(ValueError):
    pass


class InvalidLabelError(ValueError):
    pass


class EmptyDatasetError(ValueError):
    pass


class RecordError(ValueError):
    """A malformed input record. ``line`` is 1-based."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class ModeMismatchError(ConfigError):
    pass


class ProtocolError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


class TruncatedError(FormatError):
    pass
