"""Exception types raised across the package."""


class ValidationError(ValueError):
    """An input violates a documented precondition.

    ``field`` names the offending parameter when one can be identified.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class SolvencyError(RuntimeError):
    """Every agent is bankrupt at some grid point, so no state price density exists."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap.

    ``residual`` carries the last residual so callers can report it.
    """

    def __init__(self, message: str, residual=None):
        super().__init__(message)
        self.residual = residual
