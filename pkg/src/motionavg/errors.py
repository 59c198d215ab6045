"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class MotionAveragingError(Exception):
    """Base class for every error raised by this package."""


class DegenerateMatrix(MotionAveragingError):
    """A matrix projection onto SO(3) is ambiguous."""


class DegenerateConfiguration(MotionAveragingError):
    """A point configuration does not identify an alignment."""


class CoincidentCenters(MotionAveragingError):
    pass


class UnknownNode(MotionAveragingError):
    pass


class NodeSetMismatch(MotionAveragingError):
    pass


class NotConnected(MotionAveragingError):
    pass


class EigenFailure(MotionAveragingError):
    pass


class SingularKKT(MotionAveragingError):
    pass


class NoRotations(MotionAveragingError):
    pass


class GenerationFailed(MotionAveragingError):
    pass


class MissingGroundTruth(MotionAveragingError):
    pass


class LengthMismatch(MotionAveragingError):
    pass


class EmptyDataset(MotionAveragingError):
    pass


class ConfigError(MotionAveragingError):
    pass


class ParseError(MotionAveragingError):
    """Malformed graph text. ``line`` is 1-based, or None when not tied to a line."""

    def __init__(self, reason: str, line: int | None = None):
        self.reason = reason
        self.line = line
        msg = reason if line is None else f"line {line}: {reason}"
        super().__init__(msg)


class DuplicateEdge(ParseError):
    pass


class UnknownNodeRef(ParseError):
    pass
