"""Exception hierarchy shared by the solvers and the command line front end."""


class RadnerError(Exception):
    """Base class; ``category`` is the machine-readable tag the CLI reports."""

    category = "error"


class ValidationError(RadnerError, ValueError):
    category = "validation"

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems) if problems else [message]


class CapacityError(RadnerError):
    category = "capacity"


class DomainError(RadnerError, ValueError):
    category = "domain"


class ConvergenceError(RadnerError):
    """Raised when an iteration stops without meeting its tolerance.

    ``trace`` carries the per-iteration residuals so callers can inspect
    how far the iteration got.
    """

    category = "convergence"

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class MonotonicityError(RadnerError):
    category = "monotonicity"

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
