"""Exception taxonomy shared across the package."""


class AuresError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(AuresError):
    """Tensor shapes do not conform for the requested operation."""


class ConfigurationError(AuresError):
    """A configuration value is invalid (e.g. non-positive output extent)."""


class DomainError(AuresError):
    """Math operation applied outside its domain (log/sqrt of a negative)."""


class NumericError(AuresError):
    """A NaN or Inf surfaced in a completed operation."""


class UsageError(AuresError):
    """API misuse, e.g. backward on a non-scalar tensor."""


class InputError(AuresError):
    """Invalid runtime input data (e.g. too-short waveform)."""


class IngestionError(AuresError):
    """File ingestion failed (WAV format, manifest rows)."""


class CheckpointError(AuresError):
    """Checkpoint is corrupt, version-mismatched, or config-mismatched."""


class MetricError(AuresError):
    """A metric is undefined for the given inputs."""


class StepError(AuresError):
    """An optimization step hit non-finite gradients or loss."""
