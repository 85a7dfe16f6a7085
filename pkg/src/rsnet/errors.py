"""Exception types raised across the package."""


class RSNetError(Exception):
    """Base class for all package errors."""


class ParseError(RSNetError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(RSNetError, ValueError):
    pass


class ShapeError(RSNetError, ValueError):
    pass


class ConfigError(RSNetError, ValueError):
    pass


class EmptySceneError(RSNetError):
    pass


class EmptyCubeError(RSNetError):
    pass


class CoverageError(RSNetError):
    pass


class VersionError(RSNetError):
    pass


class IoError(RSNetError, OSError):
    pass
