"""Exception types shared across the package."""


class RayBeamError(Exception):
    """Base class for all package errors."""


class IntegrationError(RayBeamError):
    """ODE solver failed (step-size underflow, NaN state, ...)."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class TrappedRayError(IntegrationError):
    """No boundary crossing found within the allowed time horizon."""


class NonTransversalError(RayBeamError):
    """Ray meets the boundary tangentially; event/jet computations reject it."""


class PositivityError(RayBeamError):
    """A matrix that must have positive-definite imaginary part lost it."""


class ConfigError(RayBeamError):
    """Experiment configuration failed validation."""
