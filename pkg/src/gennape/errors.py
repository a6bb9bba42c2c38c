"""Exception types shared across the package.

Every error the library raises derives from :class:`GennapeError`, so callers
(the CLI in particular) can report them by class name.
"""

from __future__ import annotations


class GennapeError(Exception):
    """Base class for all library errors."""


class ValidationError(GennapeError):
    """A computation graph violates one of its invariants."""


class CycleError(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class TopologyError(ValidationError):
    pass


class ParseError(GennapeError):
    """Malformed serialized input. ``offset`` is a byte offset, or None when
    the bytes parsed but did not match the schema."""

    def __init__(self, reason: str, offset: int | None = None):
        self.reason = reason
        self.offset = offset
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{reason}{where}")


class EigenConvergenceError(GennapeError):
    pass


class DegenerateProjection(GennapeError):
    pass


class NonFiniteLoss(GennapeError):
    def __init__(self, batch_index: int, value: float):
        self.batch_index = batch_index
        self.value = value
        super().__init__(f"non-finite loss {value!r} at batch {batch_index}")


class DegenerateVariance(GennapeError, UserWarning):
    """Raised (or emitted as a warning) for near-zero variance dimensions."""


class EmptyInput(GennapeError):
    pass


class InvalidFuzzifier(GennapeError):
    pass


class InsufficientSamples(GennapeError):
    pass


class MismatchedLengths(GennapeError):
    pass


class ConstantInput(GennapeError):
    pass


class DegenerateLabels(GennapeError):
    pass


class EmptyFrontier(GennapeError):
    pass


class GenerationExhausted(GennapeError):
    pass


class VersionMismatch(GennapeError):
    pass


class ChecksumError(GennapeError):
    pass
