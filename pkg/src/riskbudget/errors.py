"""Exception types shared across the package."""


class PathRangeError(ValueError):
    """Arc-length query outside the reference path."""


class HorizonExhaustedError(ValueError):
    """Agent prediction does not cover the requested step."""


class DegenerateObservationError(ValueError):
    """Observation has vanishing likelihood under every motion pattern."""


class PlanningGraphError(RuntimeError):
    """Planning graph has no horizon-spanning path."""


class ModelTooLargeError(RuntimeError):
    """Exact enumeration would exceed the node cap."""


class ConfigError(ValueError):
    """Invalid run or scenario configuration."""

    def __init__(self, message: str, context: str | None = None):
        self.context = context
        super().__init__(message if context is None else f"{context}: {message}")
