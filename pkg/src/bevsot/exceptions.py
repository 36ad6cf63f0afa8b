"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1 (usage),
DataFormatError -> 2 (data), NumericError -> 3 (numeric failure).
"""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values (NaN/Inf)."""


class DataFormatError(ValueError):
    """An on-disk artifact is malformed; message names the file and offset."""


class ConfigError(ValueError):
    """A configuration value or key is invalid."""
