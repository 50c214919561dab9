"""
Exception hierarchy for fairprobe.

Every error carries a stable ``code`` (the name the CLI reports) and a
``context`` dict with whatever locates the problem: file, line, record,
offending groups or a partial result.
"""

from typing import Any, Dict, Optional


class FairProbeError(Exception):
    """Base class for all toolkit errors"""

    code = "FairProbeError"

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = {k: v for k, v in context.items() if v is not None}

    def with_context(self, **context: Any) -> "FairProbeError":
        """Attach more location info (file, line) and return self for re-raising"""
        self.context.update({k: v for k, v in context.items() if v is not None})
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            'error': self.code,
            'message': self.message,
            'context': _jsonable(self.context),
        }

    def __str__(self) -> str:
        if not self.context:
            return self.message
        where = ", ".join(f"{k}={v}" for k, v in sorted(self.context.items()))
        return f"{self.message} ({where})"


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        items = sorted(value) if isinstance(value, (set, frozenset)) else value
        return [_jsonable(v) for v in items]
    if hasattr(value, 'item'):
        return value.item()
    return value


class NoConvergenceWarning(UserWarning):
    """An iterative routine hit its iteration cap; the best estimate was kept"""


# -- validation -------------------------------------------------------------

class ValidationError(FairProbeError):
    code = "ValidationError"


class InvalidTaxonomy(ValidationError):
    code = "InvalidTaxonomy"


class InvalidTable(ValidationError):
    code = "InvalidTable"


class InvalidModel(ValidationError):
    code = "InvalidModel"


class InvalidConfig(ValidationError):
    code = "InvalidConfig"


class MissingLabel(ValidationError):
    code = "MissingLabel"


class EmptyTable(ValidationError):
    code = "EmptyTable"


class EmptyRow(ValidationError):
    code = "EmptyRow"


class EmptyGroup(ValidationError):
    code = "EmptyGroup"


class DuplicateImageId(ValidationError):
    code = "DuplicateImageId"


class UnknownSegment(ValidationError):
    code = "UnknownSegment"


class DimensionMismatch(ValidationError):
    code = "DimensionMismatch"


# -- metrics ----------------------------------------------------------------

class MetricError(FairProbeError):
    code = "MetricError"


class ZeroMean(MetricError):
    code = "ZeroMean"


class ZeroMax(MetricError):
    """The ratio half of a parity metric is undefined; ``partial`` keeps the rest"""

    code = "ZeroMax"

    def __init__(self, message: str, partial: Optional[Dict[str, Any]] = None, **context: Any):
        super().__init__(message, partial=partial, **context)
        self.partial: Dict[str, Any] = dict(partial or {})


# -- estimation -------------------------------------------------------------

class EstimationError(FairProbeError):
    code = "EstimationError"


class ZeroTau(EstimationError):
    code = "ZeroTau"


class DegenerateDiagonal(EstimationError):
    code = "DegenerateDiagonal"


class SingularMatrix(EstimationError):
    code = "SingularMatrix"


class SingularConfusion(EstimationError):
    code = "SingularConfusion"


class ZeroPrior(EstimationError):
    code = "ZeroPrior"


class UndefinedPlugin(EstimationError):
    code = "UndefinedPlugin"


class StrictModeEmptyGroup(EstimationError):
    code = "StrictModeEmptyGroup"


# -- probing ----------------------------------------------------------------

class ProbingError(FairProbeError):
    code = "ProbingError"


class ZeroVariance(ProbingError):
    code = "ZeroVariance"


class EmptyClass(ProbingError):
    code = "EmptyClass"


class SingleClass(ProbingError):
    code = "SingleClass"


class KernelTooLarge(ProbingError):
    code = "KernelTooLarge"


class EmptyReference(ProbingError):
    code = "EmptyReference"


# -- file formats -----------------------------------------------------------

class FormatError(FairProbeError):
    code = "FormatError"


class BadMagic(FormatError):
    code = "BadMagic"


class TruncatedFile(FormatError):
    code = "TruncatedFile"


class NonFiniteValue(FormatError):
    code = "NonFiniteValue"


class MalformedDocument(FormatError):
    code = "MalformedDocument"
