"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Raised when array shapes disagree with the system partition."""


class CertificationError(RuntimeError):
    """Raised when a small-gain certificate is missing or violated."""


class InfeasibleError(RuntimeError):
    """Raised when a synthesis program has no feasible point.

    ``where`` identifies the failing subsystem / pattern when known.
    """

    def __init__(self, message, where=None, min_residual=None):
        super().__init__(message)
        self.where = where
        self.min_residual = min_residual


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver hits its iteration cap."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class DivergenceError(RuntimeError):
    """Raised when a closed-loop rollout blows past the overflow guard."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configuration."""
