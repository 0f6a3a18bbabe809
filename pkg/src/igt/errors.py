"""Exception taxonomy shared across the package."""


class IgtError(Exception):
    """Base class for all package-specific failures."""


class DimensionError(IgtError):
    """Tensor shapes incompatible with the requested operation."""


class ContractError(IgtError):
    """A caller violated an operation precondition."""


class ConfigurationError(IgtError):
    """Invalid configuration value or combination."""


class IngestionError(IgtError):
    """Malformed or inconsistent dataset input."""


class GenerationError(IgtError):
    """Synthetic bag generation could not satisfy its constraints."""


class TrainingError(IgtError):
    """Training aborted (non-finite loss or gradient)."""


class CheckpointError(IgtError):
    """Checkpoint file malformed or incompatible with the model."""


class UndefinedMetricError(IgtError):
    """Metric undefined for the given label distribution."""
