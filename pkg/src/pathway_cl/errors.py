"""Exception types shared across the package."""


class PathwayError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PathwayError, ValueError):
    pass


class ConfigError(PathwayError, ValueError):
    pass


class ContractError(PathwayError, RuntimeError):
    """A precondition that depends on call history was violated (e.g. stale cache)."""


class NumericError(PathwayError, FloatingPointError):
    pass


class DegenerateNormalizationError(PathwayError, ZeroDivisionError):
    """A normalized metric has a zero denominator."""
