"""Exception hierarchy.

Validation errors map to CLI exit code 2, numerical failures to exit code 3.
"""


class TilensError(Exception):
    """Base class for all package errors."""


class ValidationError(TilensError, ValueError):
    """Invalid input, configuration or model."""


class ConfigError(ValidationError):
    """Malformed or inconsistent configuration file."""


class ModelInvalidError(ValidationError):
    """Material model violates its invariants at some point."""

    def __init__(self, message, point=None):
        if point is not None:
            message = f"{message} at x={list(map(float, point))}"
        super().__init__(message)
        self.point = point


class ProbeInvalidError(ValidationError):
    """Oscillatory probe frequency not resolvable on the grid."""


class NumericalError(TilensError, RuntimeError):
    """Base class for numerical failures."""


class ConvexityError(NumericalError):
    """Fiber convexity failure (Newton for xi(omega) did not converge)."""


class TrappedRayError(NumericalError):
    """A ray did not leave the domain before the time limit."""


class IntegrationError(NumericalError):
    """Step-size underflow or step budget exhausted."""


class NotParabolicError(NumericalError):
    """Lower bound required for a parabolic inverse is violated."""
