"""Exception hierarchy shared by all modules."""


class QLBMError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(QLBMError, ValueError):
    """Unknown model, preset, method or inconsistent configuration."""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class DomainError(QLBMError, ValueError):
    """Input outside the mathematical domain of an operation."""


class ShapeError(QLBMError, ValueError):
    """Array sizes or grid metadata do not match."""


class PreconditionError(QLBMError, ValueError):
    """State does not satisfy an operation's precondition."""


class DegenerateProjectionError(QLBMError, ArithmeticError):
    """Post-selection onto a (numerically) empty subspace."""


class ResourceError(QLBMError, MemoryError):
    """Requested dense object exceeds the desk-scale limit."""


class FitFailure(QLBMError, RuntimeError):
    """Shadow fit diverged; ``best`` holds the best state seen."""

    def __init__(self, message, best=None, history=None):
        super().__init__(message)
        self.best = best
        self.history = history or []
