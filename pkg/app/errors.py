class EafException(Exception):
    """Base exception for feature, fusion, training and harness errors."""

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}


class DimensionError(EafException):
    """Raised when tensor shapes or feature widths do not line up."""
    pass


class SequenceTooShortError(EafException):
    """Raised when a sequence is too short for windowing or pooling."""
    pass


class NoValidFramesError(EafException):
    """Raised when every face detection in a sequence failed."""
    pass


class ConfigurationError(EafException):
    """Raised for invalid hyperparameters or ablation configs."""
    pass


class FeatureFileError(EafException):
    pass


class CheckpointError(EafException):
    pass


class DatasetError(EafException):
    pass


class NonFiniteLossError(EafException):
    """Raised when a training step produces a NaN or infinite loss."""
    pass


class ZeroNormError(EafException):
    """Raised when a pooled vector has zero norm and cosine similarity is undefined."""
    pass


class PromptError(EafException):
    pass


class TargetSequenceError(EafException):
    pass
