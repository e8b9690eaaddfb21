"""Exception hierarchy.

Every error raised on bad input derives from :class:`AdvFilterError`, so the
CLI can map data problems to a single exit code without catching bugs.
"""

from __future__ import annotations


class AdvFilterError(Exception):
    """Base class for all expected, data-dependent failures."""


# --- formats -----------------------------------------------------------------

class FormatError(AdvFilterError, ValueError):
    pass


class MalformedHeader(FormatError):
    pass


class TruncatedFrame(FormatError):
    pass


class UnsupportedColorspace(FormatError):
    pass


class BadMaxval(FormatError):
    pass


class TruncatedPixelData(FormatError):
    pass


class SchemaViolation(FormatError):
    def __init__(self, key_path: str, message: str):
        super().__init__(f"{key_path}: {message}")
        self.key_path = key_path


class IoError(AdvFilterError, OSError):
    def __init__(self, path, message: str):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


# --- numerics ----------------------------------------------------------------

class ShapeMismatch(AdvFilterError, ValueError):
    pass


class DimensionMismatch(AdvFilterError, ValueError):
    pass


class FrameTooSmall(AdvFilterError, ValueError):
    pass


# --- forest ------------------------------------------------------------------

class TooFewPoints(AdvFilterError, ValueError):
    pass


class NonFiniteFeature(AdvFilterError, ValueError):
    def __init__(self, dimension: int):
        super().__init__(f"non-finite value in feature dimension {dimension}")
        self.dimension = dimension


class NotFitted(AdvFilterError, RuntimeError):
    pass


# --- pipeline / evaluation / report -----------------------------------------

class EmptyDataset(AdvFilterError, ValueError):
    pass


class WarmupTooShort(AdvFilterError, ValueError):
    pass


class UnknownTruth(AdvFilterError, ValueError):
    def __init__(self, frame_index: int):
        super().__init__(f"record for frame {frame_index} has unknown ground truth")
        self.frame_index = frame_index


class EmptyMatrix(AdvFilterError, ValueError):
    pass


class SingleClass(AdvFilterError, ValueError):
    pass


class MissingInput(AdvFilterError, ValueError):
    def __init__(self, kind: str, field: str):
        super().__init__(f"chart {kind!r} requires {field}")
        self.kind = kind
        self.field = field
