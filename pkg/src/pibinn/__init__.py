"""One-bit quantized unrolled networks for sparse recovery."""

from .errors import (ConfigError, CorruptManifestError, DimensionError, NonConvergenceError,
                     NumericalError, ShapeMismatchError, TruncatedDataError)
from .linalg import BlockDiagOperator
from .physics import BlockStructure, SparsityMask
from .unroll import Activation, LossKind, QuantMode, UnrolledNet

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "BlockDiagOperator",
    "BlockStructure",
    "ConfigError",
    "CorruptManifestError",
    "DimensionError",
    "LossKind",
    "NonConvergenceError",
    "NumericalError",
    "QuantMode",
    "ShapeMismatchError",
    "SparsityMask",
    "TruncatedDataError",
    "UnrolledNet",
]
