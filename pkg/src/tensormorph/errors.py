"""Exception types raised across the library.

Everything derives from :class:`TensorMorphError` so callers can catch the
library's failures with a single handler; the CLI maps them to exit code 2.
"""


class TensorMorphError(Exception):
    """Base class for all tensormorph errors."""


# --- canonical tensor model ---

class CoordOutOfRange(TensorMorphError):
    pass


class DuplicateCoord(TensorMorphError):
    pass


class DimMismatch(TensorMorphError):
    pass


class CapExceeded(TensorMorphError):
    pass


# --- DSL parsing / evaluation ---

class DslSyntaxError(TensorMorphError):
    """Syntax error in remap or query text; carries the character offset."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnboundVariable(TensorMorphError):
    pass


class ArityError(TensorMorphError):
    pass


class CounterOrderViolation(TensorMorphError):
    pass


class DivisorNotPositive(TensorMorphError):
    pass


class NegativeDividend(TensorMorphError):
    pass


class BitsOutOfRange(TensorMorphError):
    pass


# --- attribute queries ---

class UnknownVar(TensorMorphError):
    pass


class NonContiguousCountArgs(TensorMorphError):
    pass


class UnboundedDim(TensorMorphError):
    pass


class ExtentOverflow(TensorMorphError):
    pass


# --- level formats / assembly protocol ---

class ProtocolViolation(TensorMorphError):
    """A level function was invoked out of the assembly protocol order."""


class NotYetAssembled(TensorMorphError):
    pass


class NoLocateCapability(TensorMorphError):
    pass


class InsertAfterFinalize(ProtocolViolation):
    pass


class ParentPosOutOfRange(TensorMorphError):
    pass


class OutOfOrderParent(ProtocolViolation):
    pass


class MissingQueryResult(TensorMorphError):
    pass


class SlotExhausted(TensorMorphError):
    pass


class DuplicateForbidden(TensorMorphError):
    pass


class PosOutOfRange(TensorMorphError):
    pass


# --- registry / planner ---

class UnknownFormat(TensorMorphError):
    pass


class ValidationFailed(TensorMorphError):
    pass


class NameCollision(TensorMorphError):
    pass


class OrderMismatch(TensorMorphError):
    pass


class PlanInfeasible(TensorMorphError):
    pass


# --- I/O ---

class UnsupportedHeader(TensorMorphError):
    pass


class MatrixMarketParseError(TensorMorphError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


class BadMagic(TensorMorphError):
    pass


class TruncatedFile(TensorMorphError):
    pass
