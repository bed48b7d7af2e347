"""Exception types raised across the package."""


class AlmdaError(Exception):
    """Base class for all errors raised by almda."""


class DimensionError(AlmdaError, ValueError):
    """Array shapes or feature counts do not line up."""


class DomainError(AlmdaError, ValueError):
    """An argument lies outside the set of values an operation accepts."""


class NumericError(AlmdaError, ArithmeticError):
    """Non-finite input, or a numerical routine failed to converge."""


class SpecError(AlmdaError, ValueError):
    """A transformation spec is internally inconsistent."""


class ConfigError(AlmdaError, ValueError):
    """An experiment configuration is invalid."""


class ParseError(AlmdaError, ValueError):
    """A data file could not be parsed.

    The message always names the file and, where applicable, the line.
    """

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = self.path if line is None else f"{self.path}:{line}"
        super().__init__(f"{where}: {message}")
