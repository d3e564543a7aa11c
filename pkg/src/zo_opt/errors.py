"""Exception hierarchy shared by the oracle, estimators and solvers."""


class ZoOptError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(ZoOptError, ValueError):
    """A caller broke a precondition (dimension mismatch, m = 0, ...)."""


class DomainError(ZoOptError, ValueError):
    """Input lies outside the domain of an operation (e.g. non-finite point)."""


class NotAvailableError(ZoOptError, NotImplementedError):
    """A reference quantity is not available for this problem family."""


class NumericError(ZoOptError, FloatingPointError):
    """The oracle produced a non-finite value."""


class ConfigError(ZoOptError, ValueError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class SolverError(ZoOptError, RuntimeError):
    """A solver run was aborted. ``record`` holds the partial trace, if any."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class IcgBudgetError(SolverError):
    def __init__(self, message, best, gap, iterations, record=None):
        super().__init__(message, record)
        self.best = best
        self.gap = gap
        self.iterations = iterations


class SubsolverBudgetError(SolverError):
    def __init__(self, message, best, residual, record=None):
        super().__init__(message, record)
        self.best = best
        self.residual = residual


class DivergenceError(SolverError):
    pass


class PracticalScheduleWarning(UserWarning):
    """User-chosen schedule: the theoretical constants no longer apply."""
