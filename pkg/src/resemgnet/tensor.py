"""Minimal dense-tensor substrate.

A :class:`Tensor` is a validated, C-contiguous numpy array of rank 1-3.
Storage is 32-bit floats by default; 64-bit storage is supported so the
finite-difference oracle can run the same math at full precision.
Reductions always accumulate in 64-bit regardless of storage precision.

There is no broadcasting: shape promotion is explicit at call sites.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DimensionError, UsageError
from .mathutil import sigmoid

#: Supported storage precisions. float32 is the production default;
#: float64 exists for gradient checking.
ALLOWED_DTYPES = (np.float32, np.float64)

#: When True (default), constructing a Tensor containing NaN/Inf raises.
STRICT_FINITE = True


class Tensor:
    """Dense row-major numeric array of rank 1-3.

    Sequence data uses the (T, C) = (time steps, channels) convention.
    Values are immutable from the caller's viewpoint; only the training
    loop mutates parameter storage, through the optimizer.
    """

    __slots__ = ("data",)

    def __init__(self, data, shape=None, dtype=np.float32, check: bool = True):
        dtype = np.dtype(dtype)
        if dtype.type not in ALLOWED_DTYPES:
            raise UsageError(f"unsupported tensor dtype {dtype}")
        arr = np.ascontiguousarray(data, dtype=dtype)
        if shape is not None:
            shape = tuple(int(d) for d in shape)
            n = 1
            for d in shape:
                n *= d
            if arr.ndim != 1 or arr.size != n:
                raise DimensionError(
                    f"data length {arr.size} does not match shape {shape} "
                    f"(product {n})"
                )
            arr = arr.reshape(shape)
        if check:
            if arr.ndim not in (1, 2, 3):
                raise DimensionError(f"rank must be 1-3, got rank {arr.ndim}")
            if arr.size == 0:
                raise DimensionError(f"zero-size tensor rejected (shape {arr.shape})")
            if STRICT_FINITE and not np.isfinite(arr).all():
                raise UsageError("tensor contains non-finite values")
        self.data = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def rank(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @classmethod
    def zeros(cls, shape, dtype=np.float32) -> "Tensor":
        return cls(np.zeros(shape, dtype=dtype), check=True)

    @classmethod
    def wrap(cls, arr: np.ndarray) -> "Tensor":
        """Wrap an array produced internally, skipping validity checks.

        Unlike the constructor this preserves the array's precision.
        """
        return cls(arr, dtype=arr.dtype, check=False)

    def copy(self) -> "Tensor":
        return Tensor.wrap(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Rank-2 matrix product with 64-bit accumulation.

    out[i][j] = sum_p a[i][p] * b[p][j], accumulated in float64 and
    rounded back to the storage precision of ``a``.
    """
    if a.rank != 2 or b.rank != 2:
        raise DimensionError(
            f"matmul needs rank-2 operands, got shapes {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}"
        )
    out = matmul_acc64(a.data, b.data)
    return Tensor.wrap(out)


def matmul_acc64(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Raw-array matmul, float64 accumulation, result in ``a``'s dtype."""
    prod = np.dot(a.astype(np.float64, copy=False), b.astype(np.float64, copy=False))
    return prod.astype(a.dtype, copy=False)


def ew_add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two identically shaped tensors."""
    if a.shape != b.shape:
        raise DimensionError(f"ew_add shape mismatch: {a.shape} vs {b.shape}")
    return Tensor.wrap(a.data + b.data)


_EW_FUNCS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "relu": lambda x: np.maximum(x, x.dtype.type(0)),
    "sigmoid": sigmoid,
    "tanh": np.tanh,
    "exp": np.exp,
    "neg": np.negative,
}


def ew_map(a: Tensor, f: str) -> Tensor:
    """Apply a named scalar function elementwise.

    Valid tags: relu, sigmoid, tanh, exp, neg.
    """
    try:
        func = _EW_FUNCS[f]
    except KeyError:
        raise UsageError(
            f"unknown ew_map tag {f!r}; expected one of {sorted(_EW_FUNCS)}"
        ) from None
    return Tensor.wrap(func(a.data).astype(a.dtype, copy=False))
