"""Exception types shared across the package."""


class PuganError(Exception):
    """Base class for all package errors."""


class ShapeError(PuganError):
    """Tensor shapes or axis sizes violate an operation's contract."""


class ConfigError(PuganError):
    """Invalid configuration value or config file."""


class DataError(PuganError):
    """Dataset layout, pairing, or decoding problem."""


class CheckpointError(PuganError):
    """Base class for checkpoint problems."""


class CheckpointFormatError(CheckpointError):
    """File is not a recognizable checkpoint archive."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint schema version is not supported."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint file ends before all declared buffers are present."""


class CheckpointShapeError(CheckpointError):
    """A stored buffer does not match the destination parameter shape."""


class CheckpointStageError(CheckpointError):
    """Checkpoint was produced by a different training stage than required."""
