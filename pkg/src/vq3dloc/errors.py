"""Exception hierarchy shared by every module of the toolkit."""

from __future__ import annotations


class Vq3dError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(Vq3dError, ValueError):
    """Invalid value handed to a constructor or operation."""


class DegenerateInput(Vq3dError):
    """Too few points, or points that do not span enough dimensions."""


class NumericalFailure(Vq3dError):
    """A linear-algebra routine failed to converge."""


class NoConsensus(Vq3dError):
    """No RANSAC hypothesis reached the required inlier count."""


class InsufficientAnchors(Vq3dError):
    """Fewer than three frames shared between anchors and a reconstruction."""


class BehindCamera(Vq3dError):
    """A point projects from behind the image plane."""


class UnknownScan(Vq3dError, KeyError):
    """A query references a scan id that was not loaded."""


class MismatchedIds(Vq3dError):
    """Predictions and queries do not cover the same query ids."""


class DuplicatePrediction(Vq3dError):
    """More than one prediction for a single query id."""


class ParseError(Vq3dError):
    """Malformed input file. Carries the path and line number when known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(f"{where}{message}")


class UnsupportedCameraModel(ParseError):
    pass


class ConventionError(ParseError):
    """Pose data that cannot be a valid rotation (e.g. zero quaternion)."""


class EmptyScan(ParseError):
    pass


class SchemaError(Vq3dError):
    """JSON document does not match its schema; ``path`` names the offending field."""

    def __init__(self, message: str, path: str = "$"):
        self.path = path
        super().__init__(f"{path}: {message}")
