class SpstGcnError(Exception):
    """Base exception for every error raised by `spstgcn`."""

    def __init__(self, message):
        self.message = message
        super().__init__(self.message)


class MalformedFile(SpstGcnError):
    """Exception for when a skeleton file disagrees with its declared counts."""


class NonFiniteCoordinate(SpstGcnError):
    """Exception for when a coordinate is NaN or infinite."""


class EmptySequence(SpstGcnError):
    """Exception for when a sequence has no frame containing a body."""


class InvalidSpec(SpstGcnError):
    """Exception for when a synthetic dataset description is unusable."""


class SequenceTooShort(SpstGcnError):
    """Exception for when a sequence has too few frames for an operation."""


class DimensionMismatch(SpstGcnError):
    """Exception for when two series have a different number of channels."""


class ShapeMismatch(SpstGcnError):
    """Exception for when array shapes are inconsistent with each other."""


class LabelOutOfRange(SpstGcnError):
    """Exception for when a class label falls outside `[0, N)`."""


class ConfigError(SpstGcnError):
    """Exception for when configuration keys or values are malformed."""


class GraphError(SpstGcnError):
    """Exception for when a skeleton topology breaks the graph invariants."""


class ManifestError(SpstGcnError):
    """Exception for when a dataset manifest is malformed."""


class CacheError(SpstGcnError):
    """Exception for when a binary cache or checkpoint cannot be decoded."""


class GradientCheckFailed(SpstGcnError):
    """Exception for when reverse-mode gradients disagree with finite differences."""
