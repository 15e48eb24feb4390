class ShapeError(ValueError):
    """Array shapes are incompatible with the requested operation."""


class FormatError(ValueError):
    """A serialized weight file or image file is malformed."""


class DataError(ValueError):
    """A dataset on disk is incomplete or inconsistent."""


class NumericError(ArithmeticError):
    """Training produced a non-finite value."""
