"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class RangeError(ValueError):
    """A coordinate or index lies outside its valid range."""


class ContractError(ValueError):
    """A call violates a documented precondition."""


class FormatError(ValueError):
    """A file on disk does not match the expected format."""


class VisibilityError(ValueError):
    """A scene edit produced a primitive invisible from the checked view."""


class TrainingDiverged(RuntimeError):
    """Training loss became non-finite."""
