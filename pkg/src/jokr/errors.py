"""Exception types raised across the library."""


class JokrError(Exception):
    """Base class for all library errors."""


class MissingInput(JokrError):
    """An input path does not exist or yields no frames."""


class TooShort(JokrError):
    """A video has fewer than two frames."""


class MaskMismatch(JokrError):
    """A silhouette mask does not match its frame's shape."""


class ProviderFailure(JokrError):
    """An external mask provider failed; carries the frame index."""

    def __init__(self, message: str, frame_index: int | None = None):
        super().__init__(message)
        self.frame_index = frame_index


class NotNormalized(JokrError):
    """A heatmap channel does not sum to one."""


class ShapeMismatch(JokrError):
    """A tensor does not have the shape a model expects."""


class SingularTransform(JokrError):
    """An affine transform cannot be inverted."""


class CheckpointInvalid(JokrError):
    """A checkpoint directory is missing pieces or fails validation."""


class ConfigMismatch(JokrError):
    """A checkpoint is incompatible with the requested configuration."""


class IndexOutOfRange(JokrError):
    """A keypoint override refers to an index outside the model's range."""


class DivergenceDetected(JokrError):
    """Training produced a non-finite or exploding loss."""


class LengthMismatch(JokrError):
    """A keypoint sequence is too short or has inconsistent sizes."""


class NotLoaded(JokrError):
    """The inference service has no checkpoint loaded."""
