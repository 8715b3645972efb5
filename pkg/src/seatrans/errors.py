"""Exception types raised across the package."""


class SeATransError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(SeATransError, ValueError):
    pass


class DivisibilityError(SeATransError, ValueError):
    pass


class NonFiniteError(SeATransError, ValueError):
    pass


class ScaleAlignmentError(SeATransError, ValueError):
    """No segmentation pyramid level matches a diagnosis feature's downsample rate."""


class ConfigError(SeATransError, ValueError):
    pass


class InvalidAblationError(ConfigError):
    pass


class SingleClassError(SeATransError, ValueError):
    """Metric needs both positive and negative samples."""


class DatasetError(SeATransError):
    pass


class MissingFileError(DatasetError, FileNotFoundError):
    pass


class ImageDecodeError(DatasetError):
    pass


class MaskSizeMismatchError(DatasetError):
    pass


class LabelError(DatasetError):
    pass


class EmptyDatasetError(DatasetError, ValueError):
    pass


class CheckpointError(SeATransError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointDigestError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class MissingCheckpointError(CheckpointError, FileNotFoundError):
    pass


class TrainingDivergedError(SeATransError, RuntimeError):
    pass


class UnknownLayerError(SeATransError, KeyError):
    pass


class NonSpatialLayerError(SeATransError, ValueError):
    pass
