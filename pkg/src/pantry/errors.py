"""Exception hierarchy shared by every pantry module.

The CLI maps these onto exit codes: I/O-flavoured errors (``OSError``
subclasses) exit with 2, everything else derived from ``PantryError`` with 1.
"""


class PantryError(Exception):
    pass


class ArgumentError(PantryError, ValueError):
    """Bad argument value or incompatible dimensions."""


class ShapeError(ArgumentError):
    pass


class StructureError(PantryError, ValueError):
    """A LayerGraph does not have the structure an operation needs."""


class StateError(PantryError, RuntimeError):
    pass


class NumericError(PantryError, ArithmeticError):
    """NaN or Inf appeared in a forward or backward pass."""


class ValidationError(PantryError, ValueError):
    """Input data (CSV manifest, recipe matrix, labels) failed validation."""


class ConfigError(PantryError, ValueError):
    pass


class DecodeError(PantryError, OSError):
    """A file exists but cannot be decoded."""
