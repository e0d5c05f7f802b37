"""Exception types shared across the package."""


class BitgemmError(ValueError):
    """Base class for all errors raised by this package."""


class EmptyInputError(BitgemmError):
    """An operand has a zero-sized dimension where data is required."""


class CorruptEncodingError(BitgemmError):
    """A bitmap encoding violates its structural invariants."""


class ShapeError(BitgemmError):
    """Operand shapes are inconsistent with each other or with the operation."""


class ConfigError(BitgemmError):
    """A configuration value is outside its legal range."""
