#!/usr/bin/env python3
"""
Flow Lab Error Hierarchy
Every failure the lab can report, each carrying the CLI exit code it maps to
"""

from typing import Any, Dict, Optional

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class FlowLabError(Exception):
    """Base class for all lab errors"""

    exit_code = EXIT_NUMERIC

    def __init__(self, message: str = "", **context: Any):
        super().__init__(message)
        self.message = message
        self.context = context

    @property
    def kind(self) -> str:
        return type(self).__name__

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": self.kind,
            "message": self.message,
            "exit_code": self.exit_code,
            "context": {k: repr(v) for k, v in self.context.items()},
        }


# Configuration

class ConfigError(FlowLabError):
    exit_code = EXIT_CONFIG


class UnknownCatalogEntry(ConfigError):
    pass


class ExpressionError(ConfigError):
    """A user field expression failed to parse or uses a forbidden construct"""


# I/O

class OutputError(FlowLabError):
    exit_code = EXIT_IO


# Numerics

class NumericError(FlowLabError):
    exit_code = EXIT_NUMERIC


class SingularPoint(NumericError):
    pass


class StartOnSingularSet(SingularPoint):
    pass


class DimensionMismatch(NumericError):
    pass


class NoAnalyticJacobian(NumericError):
    pass


class BlowUp(NumericError):
    pass


class StiffnessFailure(NumericError):
    pass


class FlowUndefined(NumericError):
    """A flow leg could not be evaluated; `leg` names which one"""

    def __init__(self, message: str = "", leg: Optional[str] = None, **context: Any):
        super().__init__(message, leg=leg, **context)
        self.leg = leg


class QuadratureFailure(NumericError):
    pass


class InvalidRadii(NumericError):
    pass


class RegionEmpty(NumericError):
    pass


class AllPointsLost(NumericError):
    pass


class OutOfBounds(NumericError):
    pass


class ZeroDenominator(NumericError):
    pass


class DegenerateFit(NumericError):
    pass


class ExponentMismatch(NumericError):
    pass


class NonpositiveDelta(NumericError):
    pass


class WindowMismatch(NumericError):
    pass


class TooManyLost(NumericError):
    """A run lost more samples to failed flows than its config allows"""
