"""Exception hierarchy shared by every fairgame module."""

from __future__ import annotations


class FairGameError(Exception):
    """Base class for all domain errors raised by this package."""


class ValidationError(FairGameError, ValueError):
    """A value violates a documented invariant."""


class MissingGroup(FairGameError):
    """A declared group has no samples (or no mass) where at least one is required."""


class UndefinedConditional(FairGameError):
    """A conditioning event required by a metric has (near) zero probability."""


class InsufficientSupport(FairGameError):
    """A conditioning cell has fewer observations than the configured minimum."""


class AuditAborted(FairGameError):
    """The sampler could not reach the required per-cell counts within its draw cap."""


class RadiusDegenerate(FairGameError):
    """The reference table is too thin to support a meaningful certificate radius."""


class NoFeasiblePolicy(FairGameError):
    """Every candidate policy produced an undefined metric."""


class EmptyCell(FairGameError):
    """A (group, label) cell needed for reweighing is empty."""


class GameAborted(FairGameError):
    """A game run stopped early; the partial trace is attached."""

    def __init__(self, message: str, trace=None, cause: BaseException | None = None):
        super().__init__(message)
        self.trace = trace
        self.cause = cause
