"""Forward and analytic backward passes for every layer in the network.

Each forward returns ``(output, cache)``; the matching backward consumes
the cache and returns exact analytic gradients of the forward contract.
All operations are pure given (input, params) and preserve the storage
precision of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, UsageError
from .tensor import Tensor, matmul_acc64

PADDING_MODES = ("same", "valid")


@dataclass
class Conv1DParams:
    """1-D convolution parameters: kernel (K, Cin, Cout), bias (Cout,)."""

    kernel: Tensor
    bias: Tensor
    padding: str = "same"

    def __post_init__(self):
        if self.padding not in PADDING_MODES:
            raise UsageError(f"padding must be one of {PADDING_MODES}, "
                             f"got {self.padding!r}")
        if self.kernel.rank != 3:
            raise DimensionError(f"conv kernel must be rank 3, got shape "
                                 f"{self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[2],):
            raise DimensionError(
                f"conv bias shape {self.bias.shape} does not match "
                f"{self.kernel.shape[2]} output channels")

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[2]


@dataclass
class LSTMParams:
    """Single-direction LSTM parameters.

    w_input (Cin, 4H), w_recurrent (H, 4H), bias (4H,); gate columns are
    ordered [input, forget, cell-candidate, output].
    """

    w_input: Tensor
    w_recurrent: Tensor
    bias: Tensor

    def __post_init__(self):
        hid = self.w_recurrent.shape[0]
        if self.w_recurrent.rank != 2 or self.w_recurrent.shape != (hid, 4 * hid):
            raise DimensionError(
                f"recurrent kernel must be (H, 4H), got {self.w_recurrent.shape}")
        if self.w_input.rank != 2 or self.w_input.shape[1] != 4 * hid:
            raise DimensionError(
                f"input kernel {self.w_input.shape} inconsistent with 4H={4 * hid}")
        if self.bias.shape != (4 * hid,):
            raise DimensionError(
                f"bias shape {self.bias.shape} inconsistent with 4H={4 * hid}")

    @property
    def hidden_size(self) -> int:
        return self.w_recurrent.shape[0]

    @property
    def in_channels(self) -> int:
        return self.w_input.shape[0]


@dataclass
class DenseParams:
    """Fully connected layer: weight (F, U), bias (U,)."""

    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.weight.rank != 2:
            raise DimensionError(f"dense weight must be rank 2, got "
                                 f"{self.weight.shape}")
        if self.bias.shape != (self.weight.shape[1],):
            raise DimensionError(
                f"dense bias shape {self.bias.shape} does not match "
                f"{self.weight.shape[1]} units")


# Caches are opaque per-layer records of forward intermediates; backward
# must receive the cache produced by the matching forward call.

@dataclass
class Conv1DCache:
    x: np.ndarray
    params: Conv1DParams


@dataclass
class MaxPoolCache:
    idx: np.ndarray
    t_in: int


@dataclass
class _LSTMDirectionCache:
    x: np.ndarray
    h: np.ndarray
    gates: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


@dataclass
class BiLSTMCache:
    fwd_params: LSTMParams
    bwd_params: LSTMParams
    fwd: _LSTMDirectionCache
    bwd: _LSTMDirectionCache


@dataclass
class GapCache:
    t_in: int
    dtype: np.dtype


@dataclass
class DenseCache:
    x: np.ndarray
    pre: np.ndarray
    activation: str
    params: DenseParams


def conv1d_forward(x: Tensor, p: Conv1DParams) -> tuple[Tensor, Conv1DCache]:
    """Cross-correlation (no kernel flip) with same or valid padding."""
    if x.rank != 2:
        raise DimensionError(f"conv input must be (T, C), got {x.shape}")
    if x.shape[1] != p.in_channels:
        raise DimensionError(
            f"conv input channels {x.shape[1]} do not match kernel "
            f"{p.kernel.shape}")
    same = p.padding == "same"
    if not same and x.shape[0] < p.kernel_size:
        raise DimensionError(
            f"valid conv needs T >= kernel_size, got T={x.shape[0]} < "
            f"{p.kernel_size}")
    y = kernels.conv1d_forward(x.data, p.kernel.data, p.bias.data, same)
    return Tensor.wrap(y), Conv1DCache(x=x.data, params=p)


def conv1d_backward(grad_y: Tensor, cache: Conv1DCache) -> tuple[Tensor, Tensor, Tensor]:
    p = cache.params
    same = p.padding == "same"
    t_out = cache.x.shape[0] if same else cache.x.shape[0] - p.kernel_size + 1
    if grad_y.shape != (t_out, p.out_channels):
        raise DimensionError(
            f"grad_y shape {grad_y.shape} does not match forward output "
            f"({t_out}, {p.out_channels})")
    gx, gw, gb = kernels.conv1d_backward(grad_y.data, cache.x, p.kernel.data, same)
    return Tensor.wrap(gx), Tensor.wrap(gw), Tensor.wrap(gb)


def maxpool1d(x: Tensor) -> tuple[Tensor, MaxPoolCache]:
    """Max pooling with pool size 2; a trailing odd sample is dropped."""
    if x.rank != 2:
        raise DimensionError(f"maxpool input must be (T, C), got {x.shape}")
    if x.shape[0] < 2:
        raise DimensionError(f"maxpool needs T >= 2, got T={x.shape[0]}")
    y, idx = kernels.maxpool2_forward(x.data)
    return Tensor.wrap(y), MaxPoolCache(idx=idx, t_in=x.shape[0])


def maxpool1d_backward(grad_y: Tensor, cache: MaxPoolCache) -> Tensor:
    if grad_y.shape != cache.idx.shape:
        raise DimensionError(
            f"grad_y shape {grad_y.shape} does not match pooled shape "
            f"{cache.idx.shape}")
    return Tensor.wrap(kernels.maxpool2_backward(grad_y.data, cache.idx,
                                                 cache.t_in))


def _lstm_direction_forward(x: np.ndarray, p: LSTMParams) -> tuple[np.ndarray, _LSTMDirectionCache]:
    xw = matmul_acc64(x, p.w_input.data)
    xw = (xw + p.bias.data[None, :]).astype(x.dtype, copy=False)
    h, gates, c, tanh_c = kernels.lstm_recurrence_forward(xw, p.w_recurrent.data)
    return h, _LSTMDirectionCache(x=x, h=h, gates=gates, c=c, tanh_c=tanh_c)


def _lstm_direction_backward(grad_h: np.ndarray, cache: _LSTMDirectionCache,
                             p: LSTMParams):
    dpre = kernels.lstm_recurrence_backward(
        grad_h, p.w_recurrent.data, cache.gates, cache.c, cache.tanh_c)
    hid = p.hidden_size
    h_prev = np.zeros_like(cache.h)
    h_prev[1:] = cache.h[:-1]
    gw_in = matmul_acc64(cache.x.T, dpre)
    gw_rec = matmul_acc64(h_prev.T, dpre)
    gb = dpre.sum(axis=0, dtype=np.float64).astype(dpre.dtype)
    gx = matmul_acc64(dpre, p.w_input.data.T)
    return gx, LSTMParams(Tensor.wrap(np.ascontiguousarray(gw_in)),
                          Tensor.wrap(np.ascontiguousarray(gw_rec)),
                          Tensor.wrap(gb))


def _check_lstm_input(x: Tensor, p: LSTMParams, which: str) -> None:
    if x.shape[1] != p.in_channels:
        raise DimensionError(
            f"{which} LSTM expects {p.in_channels} input channels, got "
            f"input shape {x.shape}")


def bilstm_forward(x: Tensor, fwd: LSTMParams, bwd: LSTMParams) -> tuple[Tensor, BiLSTMCache]:
    """Bidirectional LSTM over the full sequence.

    The backward direction runs on time-reversed input and its hidden
    sequence is re-reversed so y[t] = concat(h_fwd[t], h_bwd[t]). Initial
    states are zero; the full (T, 2H) sequence is returned.
    """
    if x.rank != 2:
        raise DimensionError(f"bilstm input must be (T, C), got {x.shape}")
    _check_lstm_input(x, fwd, "forward")
    _check_lstm_input(x, bwd, "backward")
    if fwd.hidden_size != bwd.hidden_size:
        raise DimensionError(
            f"direction hidden sizes differ: {fwd.hidden_size} vs "
            f"{bwd.hidden_size}")
    h_f, cache_f = _lstm_direction_forward(x.data, fwd)
    x_rev = np.ascontiguousarray(x.data[::-1])
    h_b_rev, cache_b = _lstm_direction_forward(x_rev, bwd)
    y = np.concatenate([h_f, h_b_rev[::-1]], axis=1)
    return Tensor.wrap(np.ascontiguousarray(y)), BiLSTMCache(
        fwd_params=fwd, bwd_params=bwd, fwd=cache_f, bwd=cache_b)


def bilstm_backward(grad_y: Tensor, cache: BiLSTMCache) -> tuple[Tensor, LSTMParams, LSTMParams]:
    hid = cache.fwd_params.hidden_size
    t_len = cache.fwd.x.shape[0]
    if grad_y.shape != (t_len, 2 * hid):
        raise DimensionError(
            f"grad_y shape {grad_y.shape} does not match bilstm output "
            f"({t_len}, {2 * hid})")
    gh_f = np.ascontiguousarray(grad_y.data[:, :hid])
    gh_b_rev = np.ascontiguousarray(grad_y.data[::-1, hid:])
    gx_f, gfwd = _lstm_direction_backward(gh_f, cache.fwd, cache.fwd_params)
    gx_b_rev, gbwd = _lstm_direction_backward(gh_b_rev, cache.bwd,
                                              cache.bwd_params)
    gx = gx_f + gx_b_rev[::-1]
    return Tensor.wrap(np.ascontiguousarray(gx)), gfwd, gbwd


def global_avg_pool(x: Tensor) -> tuple[Tensor, GapCache]:
    """Mean over the time axis per channel."""
    if x.rank != 2:
        raise DimensionError(f"global_avg_pool input must be (T, C), got {x.shape}")
    y = x.data.mean(axis=0, dtype=np.float64).astype(x.dtype)
    return Tensor.wrap(y), GapCache(t_in=x.shape[0], dtype=x.dtype)


def global_avg_pool_backward(grad_y: Tensor, cache: GapCache) -> Tensor:
    if grad_y.rank != 1:
        raise DimensionError(f"grad_y must be rank 1, got {grad_y.shape}")
    row = (grad_y.data.astype(np.float64) / cache.t_in).astype(cache.dtype)
    return Tensor.wrap(np.repeat(row[None, :], cache.t_in, axis=0))


ACTIVATIONS = ("relu", "none")


def dense_forward(x: Tensor, p: DenseParams, activation: str = "none") -> tuple[Tensor, DenseCache]:
    """y = act(x W + b) for a rank-1 feature vector x."""
    if activation not in ACTIVATIONS:
        raise UsageError(f"activation must be one of {ACTIVATIONS}, got "
                         f"{activation!r}")
    if x.rank != 1:
        raise DimensionError(f"dense input must be rank 1, got {x.shape}")
    if x.shape[0] != p.weight.shape[0]:
        raise DimensionError(
            f"dense input length {x.shape[0]} does not match weight "
            f"{p.weight.shape}")
    pre64 = x.data.astype(np.float64) @ p.weight.data.astype(np.float64) \
        + p.bias.data.astype(np.float64)
    pre = pre64.astype(x.dtype)
    y = np.maximum(pre, pre.dtype.type(0)) if activation == "relu" else pre
    return Tensor.wrap(y), DenseCache(x=x.data, pre=pre, activation=activation,
                                      params=p)


def dense_backward(grad_y: Tensor, cache: DenseCache) -> tuple[Tensor, Tensor, Tensor]:
    if grad_y.shape != cache.pre.shape:
        raise DimensionError(
            f"grad_y shape {grad_y.shape} does not match output shape "
            f"{cache.pre.shape}")
    g = grad_y.data
    if cache.activation == "relu":
        # gradient at exactly 0 is defined as 0
        g = g * (cache.pre > 0)
    g64 = g.astype(np.float64)
    x64 = cache.x.astype(np.float64)
    dt = cache.x.dtype
    gw = np.outer(x64, g64).astype(dt)
    gb = g64.astype(dt)
    gx = (cache.params.weight.data.astype(np.float64) @ g64).astype(dt)
    return Tensor.wrap(gx), Tensor.wrap(gw), Tensor.wrap(gb)


def softmax(z: Tensor) -> Tensor:
    """Stable softmax of a rank-1 logit vector; output sums to 1."""
    if z.rank != 1 or z.shape[0] < 2:
        raise DimensionError(f"softmax needs a rank-1 vector of length >= 2, "
                             f"got {z.shape}")
    z64 = z.data.astype(np.float64)
    e = np.exp(z64 - z64.max())
    return Tensor.wrap((e / e.sum()).astype(z.dtype))
