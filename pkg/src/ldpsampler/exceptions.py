"""Error types raised by ldpsampler.

Every input problem derives from :class:`ValidationError` (a ``ValueError``)
so callers and the CLI can map them to a single exit code. Internal invariant
breaches derive from :class:`InternalError`.
"""


class ValidationError(ValueError):
    """Base class for rejected user input."""


class NotNormalized(ValidationError):
    pass


class NegativeEntry(ValidationError):
    pass


class ZeroEntry(ValidationError):
    pass


class TooShort(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NegativeEpsilon(ValidationError):
    pass


class NonFiniteEpsilon(ValidationError):
    pass


class AlphaOutOfRange(ValidationError):
    pass


class QminOutOfRange(ValidationError):
    pass


class InvalidKernel(ValidationError):
    pass


class InvalidDivergence(ValidationError):
    pass


class GridOutOfRange(ValidationError):
    pass


class MalformedRow(ValidationError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class EmptyAfterFiltering(ValidationError):
    pass


class InconsistentCategories(ValidationError):
    pass


class InternalError(RuntimeError):
    """An invariant that should hold for all valid input was violated."""


class BisectionFailure(InternalError):
    pass


class Infeasible(InternalError):
    pass
