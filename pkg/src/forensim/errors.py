"""Exception types shared across the package."""


class ForensimError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(ForensimError, ValueError):
    """Invalid configuration value: bad parameter range, degenerate dataset, unknown variant."""


class DimensionError(ForensimError, ValueError):
    """Array shape does not match what the operation requires."""


class UnreliablePatchError(ForensimError, RuntimeError):
    """A patch was rejected by the entropy filter; no score is emitted for it."""

    def __init__(self, message, entropy=None):
        super().__init__(message)
        self.entropy = entropy


class UnreliableImageError(ForensimError, RuntimeError):
    """No block of the image passed the entropy filter."""


class UnreliableReferenceError(UnreliablePatchError):
    """The chosen localization reference block was rejected by the entropy filter."""


class CheckpointError(ForensimError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written with an unsupported format version."""


class CheckpointShapeError(CheckpointError):
    """Stored arrays do not match the shapes implied by the manifest config."""


class CheckpointTruncatedError(CheckpointError):
    """File ends before the declared payload does."""


class CheckpointChecksumError(CheckpointError):
    """Payload bytes do not match the digest recorded in the manifest."""


class UndefinedMetricError(ForensimError, ValueError):
    """Metric is undefined for the given label set (e.g. no positives)."""
