"""Exception hierarchy.

Validation problems derive from :class:`PoseKitError` (a ``ValueError``);
file-system problems raise :class:`IoFailure` (an ``OSError``).
"""


class PoseKitError(ValueError):
    """Base class for all validation errors raised by posekit."""


class DegenerateRotation(PoseKitError):
    pass


class DegenerateDirection(PoseKitError):
    pass


class NonSquarePixels(PoseKitError):
    pass


class InvalidFrequency(PoseKitError):
    pass


class BehindCamera(PoseKitError):
    pass


class DegenerateMesh(PoseKitError):
    pass


class ShapeMismatch(PoseKitError):
    pass


class InsufficientPool(PoseKitError):
    pass


class CorruptBank(PoseKitError):
    pass


class EmptyCarving(PoseKitError):
    pass


class EmptyCandidates(PoseKitError):
    pass


class NegativeLoss(PoseKitError):
    pass


class EmptyInput(PoseKitError):
    pass


class UnsupportedFormat(PoseKitError):
    pass


class MalformedMesh(PoseKitError):
    pass


class IoFailure(OSError):
    """Reading or writing a file or directory failed."""
