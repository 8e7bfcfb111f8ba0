"""Exception types shared across the package."""


class TseditError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(TseditError):
    """An array does not have the shape an operation expects."""


class UsageError(TseditError):
    """An API was called out of order (e.g. backward before forward)."""


class InputError(TseditError):
    """An operation received invalid input values."""


class SchemaError(TseditError):
    """An attribute, level, or template is unknown or inconsistent."""


class ConfigError(TseditError):
    """A configuration object is invalid or incomplete."""


class ProviderError(TseditError):
    """A text embedding provider misbehaved (wrong width, bad payload)."""


class TransportError(ProviderError):
    """A network round-trip to an external provider failed."""


class ModelError(TseditError):
    """A model/checkpoint is missing, untrained, or incompatible."""


class CheckpointError(TseditError):
    """A checkpoint file could not be loaded."""


class VersionMismatchError(CheckpointError):
    """Checkpoint format version differs from what this code writes."""


class FingerprintMismatchError(CheckpointError):
    """Checkpoint was produced under a different text-embedding provider."""


class TruncatedPayloadError(CheckpointError):
    """Checkpoint tensor payload is shorter than its header promises."""


class IngestError(TseditError):
    """CSV ingestion failed outright (unreadable file, bad options)."""


class TrainingDivergedError(TseditError):
    """Training hit a non-finite loss; carries a diagnostic snapshot."""

    def __init__(self, message, *, phase, epoch, batch, contrast, recon):
        super().__init__(message)
        self.phase = phase
        self.epoch = epoch
        self.batch = batch
        self.contrast = contrast
        self.recon = recon
