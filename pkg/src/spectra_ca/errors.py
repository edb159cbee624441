"""Exception hierarchy shared by every module of the package."""


class SpectraError(Exception):
    """Base class for all package errors."""


class DimensionError(SpectraError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(SpectraError, ValueError):
    """A documented precondition was violated by the caller."""


class NumericalError(SpectraError, ArithmeticError):
    """A NaN or infinity appeared where finite values are required."""


class ParameterError(SpectraError, ValueError):
    """A numeric parameter is outside its admissible range."""


class ConfigError(SpectraError, ValueError):
    """An experiment configuration could not be parsed or validated."""

    def __init__(self, message, line=None):
        self.bare = message
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(SpectraError, ValueError):
    """A file on disk does not follow the expected format."""
