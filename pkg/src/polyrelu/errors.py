"""Exception types shared across the package."""


class StructuralError(ValueError):
    """Shapes, labels or layer layouts that cannot be combined."""


class UsageError(RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class FormatError(ValueError):
    """A data file does not match its declared binary format."""


class NumericError(ArithmeticError):
    """A numerical routine could not recover (e.g. a non-PD kernel matrix)."""
