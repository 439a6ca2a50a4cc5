"""Exception hierarchy for the stability library."""
from typing import Any, Dict, Optional


class BranchStabError(Exception):
    """Base error carrying a message and optional diagnostic data."""

    def __init__(self, message: str, data: Optional[Any] = None):
        self.message = message
        self.data = data
        super().__init__(self.message)

    def to_dict(self) -> Dict[str, Any]:
        """Convert error to a JSON-ready object."""
        error = {
            "type": type(self).__name__,
            "message": self.message
        }
        if self.data is not None:
            error["data"] = self.data
        return error


class ConfigError(BranchStabError):
    """Parameters violate a constructor's preconditions."""


class InsufficientSampleError(ConfigError):
    """A statistical test was handed fewer replicates than it needs."""


class NumericalToleranceError(BranchStabError):
    """A solver or quadrature could not hold its tolerance."""

    def __init__(self, message: str, achieved_error: float, data: Optional[Dict[str, Any]] = None):
        self.achieved_error = float(achieved_error)
        payload = {"achieved_error": self.achieved_error}
        if data:
            payload.update(data)
        super().__init__(message, payload)


class ConvergenceError(NumericalToleranceError):
    """A limit was not reached within the configured horizon."""


class SimulationError(BranchStabError):
    """A draw left the range the samplers can represent exactly."""
