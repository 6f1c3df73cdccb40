"""Exception types shared across the package."""


class FracObstacleError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FracObstacleError, ValueError):
    """Invalid parameters or an unsupported request."""


class ResolutionError(FracObstacleError, ValueError):
    """A radius or scale is too small for the grid spacing."""


class DegenerateError(FracObstacleError):
    """A normalizing quantity (H, local mass, ...) vanishes."""


class IterationLimitError(FracObstacleError):
    """The solver did not reach its tolerance within the sweep budget."""

    def __init__(self, message, sweeps=None, update=None, residual=None, field=None):
        super().__init__(message)
        self.sweeps = sweeps
        self.update = update
        self.residual = residual
        self.field = field
