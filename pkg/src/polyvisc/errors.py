"""Exception hierarchy.

``ValidationError`` covers bad inputs (CLI exit code 1); everything else
derived from ``PolyviscError`` is a runtime failure (exit code 2).
"""


class PolyviscError(Exception):
    """Base class for all package errors."""


class ValidationError(PolyviscError, ValueError):
    """Input failed a precondition or invariant."""


class ParseError(ValidationError):
    def __init__(self, line, column, reason):
        self.line = line
        self.column = column
        self.reason = reason
        super().__init__(f"line {line}, column {column!r}: {reason}")


class InvariantViolation(ValidationError):
    def __init__(self, record_id, detail):
        self.record_id = record_id
        self.detail = detail
        super().__init__(f"record {record_id!r}: {detail}")


class EmptyDataset(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class EmptySamples(ValidationError):
    pass


class EmptySmiles(ValidationError):
    pass


class EmptyBatch(ValidationError):
    pass


class EmptyGrid(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class DegenerateRange(ValidationError):
    pass


class ZeroVariance(ValidationError):
    pass


class NonPositiveComponent(ValidationError):
    pass


class TooFewPoints(ValidationError):
    pass


class TooFewSamples(ValidationError):
    pass


class TooFewMonomers(ValidationError):
    pass


class InvalidCounts(ValidationError):
    pass


class MissingMcr(ValidationError):
    pass


class DenominatorTooSmall(PolyviscError, ArithmeticError):
    """WLF denominator ``C2 + (T - Tr)`` fell below the validity threshold."""


class NonFiniteLoss(PolyviscError, FloatingPointError):
    pass


class NotPositiveDefinite(PolyviscError, ArithmeticError):
    pass


class DidNotConverge(PolyviscError):
    pass
