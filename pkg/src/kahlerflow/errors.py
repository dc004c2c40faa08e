"""Exception types shared across the package."""


class KahlerFlowError(Exception):
    """Base class for all package errors."""


class ShapeError(KahlerFlowError, ValueError):
    """A field does not match the grid of the model it is used with."""


class DegenerateMetricError(KahlerFlowError):
    """A metric lost positive definiteness.

    Carries the time (if known), the flat index of the worst node and the
    offending eigenvalue so callers can report where the flow broke down.
    """

    def __init__(self, message, t=None, node=None, eigenvalue=None):
        super().__init__(message)
        self.t = t
        self.node = node
        self.eigenvalue = eigenvalue


class NumericBlowupError(KahlerFlowError):
    """Non-finite values appeared in the evolving potential."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class UnsupportedError(KahlerFlowError):
    """Requested operator is not available for this model/background."""


class CompatibilityError(KahlerFlowError, ValueError):
    """A (1,1) form is not the complex Hessian of a grid potential."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConfigError(KahlerFlowError, ValueError):
    """Invalid run configuration."""
