"""Exception hierarchy shared by every module."""


class S2AError(Exception):
    """Base class for all package errors."""


class IoFailure(S2AError):
    pass


class MagicMismatch(S2AError):
    pass


class TruncatedPayload(S2AError):
    pass


class UnsupportedVersion(S2AError):
    pass


class VersionMismatch(S2AError):
    pass


class NonFiniteInput(S2AError, ValueError):
    pass


class NonFiniteLoss(S2AError, FloatingPointError):
    """Raised when a training loss diverges; carries the offending report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ShapeMismatch(S2AError, ValueError):
    pass


class DimensionMismatch(ShapeMismatch):
    pass


class CropLargerThanScene(S2AError, ValueError):
    pass


class NonDivisibleDims(S2AError, ValueError):
    pass


class BadDims(S2AError, ValueError):
    pass


class BadFractions(S2AError, ValueError):
    pass


class UnknownBand(S2AError, KeyError):
    pass


class EmptyTaps(S2AError, ValueError):
    pass


class UnknownConditioningMode(S2AError, ValueError):
    pass


class EmptyDataset(S2AError, ValueError):
    pass


class UncoveredPixels(S2AError):
    pass


class ZeroMeanSignal(S2AError, ValueError):
    pass


class AllPixelsDegenerate(S2AError, ValueError):
    pass
