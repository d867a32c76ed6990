"""Exception hierarchy shared across the package."""


class LobexecError(Exception):
    """Base class for all package-specific failures."""


class DataFormatError(LobexecError):
    """Malformed or inconsistent tick data (carries row context when known)."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ConfigError(LobexecError):
    """Invalid or unknown configuration values."""


class SimulationError(LobexecError):
    """Illegal operation on a replay session (bad precondition, exhausted stream)."""


class SolverError(LobexecError):
    """Linear-algebra or LP failure (singular system, infeasible program)."""
