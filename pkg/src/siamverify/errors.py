"""Exception hierarchy shared across the toolkit."""


class VerifyError(Exception):
    """Base class for all toolkit errors."""


class EngineError(VerifyError):
    """Numerical failure inside the tensor engine (NaN/Inf values)."""


class DimensionError(VerifyError):
    """Tensor shapes are incompatible for the requested operation."""


class ContractError(VerifyError):
    """An API precondition was violated (non-scalar loss, missing grad, ...)."""


class ConfigError(VerifyError):
    """Invalid configuration value or combination."""


class LabelError(VerifyError):
    """Targets outside the supported label set."""


class UninitializedStatsError(VerifyError):
    """Batch normalization was asked to infer before any statistics exist."""


class LayoutError(VerifyError):
    """Dataset directory does not follow the documented layout."""


class EmptyClassError(LayoutError):
    """A required image class contains no images."""


class DecodeError(VerifyError):
    """An image file could not be decoded."""


class WeightFormatError(VerifyError):
    """Weight container has an unsupported or malformed format."""


class WeightCorruptionError(WeightFormatError):
    """Weight container failed checksum or truncation checks."""


class WeightLoadError(VerifyError):
    """Weight entries do not match the target model graph."""


class TrainingAbortError(VerifyError):
    """Training was aborted because the loss became non-finite."""
