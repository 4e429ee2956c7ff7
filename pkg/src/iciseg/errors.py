"""Exception types shared across the package."""


class IcisegError(Exception):
    """Base class for all package-specific errors."""


class BadMagic(IcisegError):
    """Volume file does not start with the RVL1 magic bytes."""


class TruncatedPayload(IcisegError):
    """Volume file payload is shorter or longer than the header declares."""


class UnknownDtype(IcisegError):
    """Volume file header declares an unsupported dtype code."""


class ShapeMismatch(IcisegError):
    """Two volumes/masks/labelings that must share a shape do not."""


class IndexOutOfRange(IcisegError):
    """A flat voxel index is outside the volume."""


class EvenCubeSize(IcisegError):
    """Center-of-instance cube size must be odd."""


class PlacementFailed(IcisegError):
    """Synthetic blob placement exhausted its retry budget."""


class NonFiniteValue(IcisegError):
    """A differentiable scalar evaluated to NaN or infinity."""


class NonFiniteLoss(IcisegError):
    """A training step produced a non-finite loss; carries a diagnostic message."""
