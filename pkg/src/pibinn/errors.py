"""Exception types raised across the package."""


class PibinnError(Exception):
    """Base class for package errors."""


class DimensionError(PibinnError, ValueError):
    """Operand shapes do not line up."""


class NonConvergenceError(PibinnError, RuntimeError):
    def __init__(self, message: str, estimate: float):
        super().__init__(message)
        self.estimate = estimate


class NumericalError(PibinnError, FloatingPointError):
    """A non-finite value appeared during a forward or backward pass."""

    def __init__(self, message: str, layer: int | None = None, stage: str | None = None,
                 epoch: int | None = None):
        super().__init__(message)
        self.layer = layer
        self.stage = stage
        self.epoch = epoch


class DatasetError(PibinnError, OSError):
    """Base class for on-disk dataset/checkpoint problems."""


class CorruptManifestError(DatasetError):
    pass


class ShapeMismatchError(DatasetError):
    pass


class TruncatedDataError(DatasetError):
    pass


class ConfigError(PibinnError, ValueError):
    """Run configuration failed validation."""
