# exceptions.py
from typing import Any, Optional


class TailRiskError(Exception):
    """Base class of every error raised by the package."""


class InputError(TailRiskError, ValueError):
    """Malformed input: wrong lengths, empty sequences, invalid ranges."""


class DomainError(TailRiskError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class FilterDivergenceError(TailRiskError, ArithmeticError):
    """A recursive filter produced a non-finite or exploding state."""

    def __init__(self, message: str, index: Optional[int] = None) -> None:
        super().__init__(message)
        self.index = index


class EstimationError(TailRiskError, RuntimeError):
    """A fit could not produce a usable parameter vector."""

    def __init__(self, message: str, diagnostics: Optional[dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.diagnostics: dict[str, Any] = diagnostics or {}


class InfeasibleStartError(EstimationError):
    pass


class RecordNotFoundError(TailRiskError, LookupError):
    pass
