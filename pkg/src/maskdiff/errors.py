"""Exception types raised across the package."""


class MaskDiffError(Exception):
    """Base class for all package errors."""


class InvalidDistribution(MaskDiffError, ValueError):
    pass


class MaskQueryError(MaskDiffError, ValueError):
    pass


class InvalidSteps(MaskDiffError, ValueError):
    pass


class DomainError(MaskDiffError, ValueError):
    pass


class DataContainsMask(MaskDiffError, ValueError):
    pass


class TimeOrderError(MaskDiffError, ValueError):
    pass


class UnreachableLatent(MaskDiffError, ValueError):
    pass


class ShapeError(MaskDiffError, ValueError):
    pass


class NumericalError(MaskDiffError, ArithmeticError):
    pass


class CacheRequiresTimeFree(MaskDiffError, ValueError):
    pass


class BlockSizeError(MaskDiffError, ValueError):
    pass


class TooLarge(MaskDiffError, ValueError):
    pass


class EmptyInput(MaskDiffError, ValueError):
    pass


class ConfigError(MaskDiffError, ValueError):
    pass


class BoundViolation(MaskDiffError, AssertionError):
    """The discrete NELBO fell below the exact model NLL."""
