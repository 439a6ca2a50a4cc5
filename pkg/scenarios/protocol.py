"""Exit-code contract and scenario-level errors for the runner."""
from enum import Enum
from typing import Any, Dict, Optional

from pydantic import ValidationError

from stability.errors import BranchStabError, NumericalToleranceError, SimulationError


class ExitCode(Enum):
    """Process exit codes."""
    PASS = 0
    STATISTICAL_FAILURE = 1
    CONFIG_ERROR = 2
    NUMERICAL_ERROR = 3
    # Custom codes
    REPLAY_MISMATCH = 4
    UNKNOWN_SCENARIO = 5


class ScenarioError(Exception):
    """Runner error with an exit code."""

    def __init__(
        self,
        code: ExitCode,
        message: str,
        data: Optional[Any] = None
    ):
        self.code = code
        self.message = message
        self.data = data
        super().__init__(self.message)

    def to_dict(self) -> Dict[str, Any]:
        """Convert error to a JSON-ready object."""
        error = {
            "code": self.code.value,
            "message": self.message
        }
        if self.data is not None:
            error["data"] = self.data
        return error


class UnknownScenarioError(ScenarioError):
    def __init__(self, name: str, known: Optional[list] = None):
        super().__init__(
            ExitCode.UNKNOWN_SCENARIO,
            f"Unknown scenario '{name}'",
            {"known": known} if known else None
        )


class InvalidConfigError(ScenarioError):
    def __init__(self, message: str, data: Optional[Any] = None):
        super().__init__(ExitCode.CONFIG_ERROR, f"Invalid config: {message}", data)


class ReplayMismatchError(ScenarioError):
    def __init__(self, path: str, data: Optional[Any] = None):
        super().__init__(ExitCode.REPLAY_MISMATCH, f"Replay of {path} does not reproduce the stored report", data)


def exit_code_for(exc: BaseException) -> ExitCode:
    """Map an exception escaping a scenario run to its exit code."""
    if isinstance(exc, ScenarioError):
        return exc.code
    if isinstance(exc, (NumericalToleranceError, SimulationError)):
        return ExitCode.NUMERICAL_ERROR
    if isinstance(exc, (BranchStabError, ValidationError)):
        return ExitCode.CONFIG_ERROR
    raise exc
