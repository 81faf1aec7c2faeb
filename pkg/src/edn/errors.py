"""Exception types raised across the package."""


class EdnError(Exception):
    """Base class for all package errors."""


class DimensionError(EdnError, ValueError):
    pass


class ConfigError(EdnError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class MissingParameterError(ConfigError):
    pass


class DomainError(EdnError, ValueError):
    pass


class UndefinedMetricError(EdnError, ValueError):
    pass


class FormatError(EdnError, ValueError):
    """Malformed file content. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
