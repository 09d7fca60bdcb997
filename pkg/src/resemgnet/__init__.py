"""EMG window classifier built from scratch.

A residual 1-D conv + bidirectional-LSTM network with hand-written
forward/backward passes, its preprocessing pipeline, training protocol
and evaluation metrics, verifiable end to end by finite-difference
gradient checks and closed-form oracles.
"""

from .errors import (DimensionError, FormatError, IngestionError,
                     OracleError, ResEMGNetError, UsageError)
from .kernels import BACKEND
from .tensor import Tensor, ew_add, ew_map, matmul

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Tensor", "matmul", "ew_add", "ew_map",
    "ResEMGNetError", "DimensionError", "UsageError", "FormatError",
    "IngestionError", "OracleError", "__version__",
]
