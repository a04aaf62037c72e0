"""Exception types shared across the package."""


class DaftError(Exception):
    """Base class for all package errors."""


class ShapeError(DaftError, ValueError):
    """Operand shapes are incompatible."""


class DegenerateInputError(DaftError, ValueError):
    """Input has no well-defined result (e.g. normalizing a zero vector)."""


class NumericError(DaftError, ArithmeticError):
    """A computation produced a non-finite value."""


class CacheTooSmallError(DaftError, ValueError):
    """Negative cache cannot supply the requested number of negatives."""


class DataFormatError(DaftError, ValueError):
    """Malformed input file. Carries the offending path and line number."""

    def __init__(self, path, lineno, reason):
        self.path = str(path)
        self.lineno = lineno
        self.reason = reason
        super().__init__(f"{self.path}:{lineno}: {reason}")


class ConfigError(DaftError, ValueError):
    """Invalid configuration value."""
