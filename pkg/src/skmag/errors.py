"""Exception types shared across the toolkit."""


class SkmagError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(SkmagError):
    """A parameter combination violates a documented precondition."""


class ValidationError(SkmagError):
    """Model or data fails a mathematical validity requirement."""


class SolverError(SkmagError):
    """An iterative solver failed to reach the requested tolerance."""

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history) if residual_history is not None else []
