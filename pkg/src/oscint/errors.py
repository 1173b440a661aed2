"""Exception hierarchy.

Every error raised by the library derives from :class:`OscintError` and
carries an optional ``witness`` mapping so the CLI can render it without
knowing the concrete type.
"""

from __future__ import annotations

from typing import Any


class OscintError(Exception):
    """Base class; ``witness`` holds JSON-serialisable diagnostic data."""

    module = "oscint"

    def __init__(self, message: str, witness: dict[str, Any] | None = None):
        super().__init__(message)
        self.witness = dict(witness or {})

    def to_dict(self) -> dict[str, Any]:
        return {
            "error": type(self).__name__,
            "module": self.module,
            "message": str(self),
            "witness": self.witness,
        }


# expr
class ExprError(OscintError):
    module = "expr"


class ExprSyntaxError(ExprError, ValueError):
    def __init__(self, message: str, position: int, expected: list[str]):
        super().__init__(
            f"{message} at position {position}; expected one of {expected}",
            {"position": position, "expected": expected},
        )
        self.position = position
        self.expected = expected


class UnknownVariable(ExprError, ValueError):
    pass


class DomainError(ExprError, ArithmeticError):
    pass


# calculus
class CalculusError(OscintError):
    module = "calculus"


class EvaluationFailed(CalculusError):
    pass


class DegenerateFit(CalculusError):
    pass


class NotASymbol(CalculusError):
    pass


class DegeneratePhase(CalculusError):
    pass


class BadRadii(CalculusError, ValueError):
    pass


# regularize
class RegularizeError(OscintError):
    module = "regularize"


class ExpressionSwell(RegularizeError):
    pass


class RegionTouchesCriticalSet(RegularizeError):
    pass


class ConeIntersectsSP(RegularizeError):
    pass


# quadrature
class QuadratureError(OscintError):
    module = "quadrature"


class NotConvergent(QuadratureError):
    pass


class ToleranceNotReached(QuadratureError):
    pass


# cli
class ConfigError(OscintError):
    module = "cli"


class ConfigParse(ConfigError):
    pass


class ConfigInvalid(ConfigError):
    pass
