class RibbonError(Exception):
    """Base class for all errors raised by ribbonlim."""


class InputError(RibbonError, ValueError):
    """Thrown when user supplied data violates a precondition."""


class ConfigError(InputError):
    """Thrown when a configuration key is missing, malformed or inconsistent."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")


class NumericalError(RibbonError, ArithmeticError):
    """Thrown when a numerical procedure fails on otherwise valid input."""


class BracketError(NumericalError):
    """Thrown when a bisection bracket cannot be established."""


class KernelSignError(NumericalError):
    """Thrown when no kernel vector has the determinant sign a branch needs."""


class DecompositionError(NumericalError):
    """Thrown when the two-point decomposition cannot be constructed."""


class NonTransversalError(NumericalError):
    """Thrown when a rank-one direction is orthogonal to the centerline."""


class WidthError(NumericalError):
    """Thrown when a requested strip half-width exceeds the admissible bound."""
