"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, ConvergenceError -> 3,
statistical gate failures -> 4.
"""


class HomogError(Exception):
    """Base class for all package errors."""


class DomainError(HomogError, ValueError):
    """A point lies outside the domain of a map or flow."""


class ConfigError(HomogError, ValueError):
    """Invalid configuration or precondition violation detected up front."""


class ConvergenceError(HomogError, RuntimeError):
    """An iterative solve stopped before reaching its tolerance.

    Carries the last residual so callers can report how far off the
    iteration was.
    """

    def __init__(self, message: str, residual: float | None = None):
        if residual is not None:
            message = f"{message} (residual={residual:.3e})"
        super().__init__(message)
        self.residual = residual


class GateError(HomogError, RuntimeError):
    """A statistical acceptance gate failed."""
