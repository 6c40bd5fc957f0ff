"""Exception types shared across the package."""


class ViewDetError(Exception):
    """Base class for all package errors."""


class DimensionError(ViewDetError):
    """Tensor shapes are inconsistent with the declared operation."""


class NumericalError(ViewDetError):
    """A numerical evaluation produced non-finite values."""


class EmptyViewError(ViewDetError):
    """A depth raster contains no valid pixels."""


class EmptySceneError(ViewDetError):
    """No valid tokens / points remain for a scene-level operation."""


class CacheOrderError(ViewDetError):
    """Frame indices must arrive strictly increasing per stream."""


class UnknownStreamError(ViewDetError):
    """Lookup of a stream id that was never started."""


class StateError(ViewDetError):
    """Operation applied in the wrong state (e.g. double coordinate transform)."""


class IngestionError(ViewDetError):
    """A scene directory is missing files or contains corrupt data."""


class ValidationError(ViewDetError):
    """Loaded data violates a structural invariant (e.g. non-orthonormal pose)."""


class InfeasibleMatchError(ViewDetError):
    """Bipartite matching cannot cover all ground-truth boxes."""


class GenerationError(ViewDetError):
    """Synthetic scene generation failed after retries."""


class ConfigError(ViewDetError):
    """Unknown or invalid run-configuration key/value."""


class TrainingDivergedError(ViewDetError):
    """Training loss became non-finite; carries the partial loss curve."""

    def __init__(self, message: str, curve=None):
        super().__init__(message)
        self.curve = curve if curve is not None else []
