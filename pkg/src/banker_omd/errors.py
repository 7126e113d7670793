"""Exception types shared across the package."""


class BankerError(Exception):
    """Base class for all package errors."""


class DomainError(BankerError, ValueError):
    """A point lies on or outside the boundary of a regularizer's domain."""


class ConvergenceError(BankerError, RuntimeError):
    """A root finder exceeded its iteration budget."""


class OrderError(BankerError, ValueError):
    """Rounds were opened or played out of order."""


class StateError(BankerError, RuntimeError):
    """An illegal status transition on a ledger entry."""


class MissingDualError(BankerError, RuntimeError):
    """An allocation spends from a round whose dual point is unknown."""


class ConfigError(BankerError, ValueError):
    """An experiment configuration is invalid."""
