"""The full network: parameter containers, initialization, end-to-end
forward/backward, prediction, parameter counting and checkpoint I/O.

Graph, for input (T, 1):

    conv1 3x32 + relu -> conv2 3x32 + relu -> maxpool 2        (T/2, 32)
    branch A: bidirectional LSTM, 64 units, full sequence      (T/2, 128)
    branch B: 1x1 conv, 128 filters (no activation)            (T/2, 128)
    A + B -> global average pool -> dense 16 relu -> dense C -> softmax

The default 3-class instantiation at T=2000 has exactly 59,235 trainable
scalars.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from . import layers
from .errors import DimensionError, FormatError, UsageError
from .layers import (BiLSTMCache, Conv1DCache, Conv1DParams, DenseCache,
                     DenseParams, GapCache, LSTMParams, MaxPoolCache)
from .tensor import Tensor

CONV_FILTERS = 32
CONV_KERNEL = 3
LSTM_UNITS = 64
SKIP_FILTERS = 128
DENSE_UNITS = 16
VALID_CLASS_COUNTS = (2, 3)

CHECKPOINT_MAGIC = b"EMGC"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    num_classes: int = 3
    input_length: int = 2000
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_classes not in VALID_CLASS_COUNTS:
            raise UsageError(f"num_classes must be one of "
                             f"{VALID_CLASS_COUNTS}, got {self.num_classes}")
        if self.input_length < 4:
            raise UsageError(f"input_length must be >= 4 to survive pooling, "
                             f"got {self.input_length}")


@dataclass
class ModelParams:
    conv1: Conv1DParams
    conv2: Conv1DParams
    lstm_fwd: LSTMParams
    lstm_bwd: LSTMParams
    path1: Conv1DParams
    dense1: DenseParams
    dense_out: DenseParams
    num_classes: int


#: Serialization / iteration order of the trainable tensors.
TENSOR_NAMES = (
    "conv1.kernel", "conv1.bias",
    "conv2.kernel", "conv2.bias",
    "lstm_fwd.w_input", "lstm_fwd.w_recurrent", "lstm_fwd.bias",
    "lstm_bwd.w_input", "lstm_bwd.w_recurrent", "lstm_bwd.bias",
    "path1.kernel", "path1.bias",
    "dense1.weight", "dense1.bias",
    "dense_out.weight", "dense_out.bias",
)


def named_tensors(params: ModelParams) -> list[tuple[str, Tensor]]:
    """All trainable tensors in a fixed, documented order."""
    out = []
    for name in TENSOR_NAMES:
        layer, attr = name.split(".")
        out.append((name, getattr(getattr(params, layer), attr)))
    return out


def params_from_arrays(arrays: dict[str, np.ndarray], num_classes: int) -> ModelParams:
    """Assemble a ModelParams from a name->array mapping."""
    t = {name: Tensor.wrap(np.ascontiguousarray(arr))
         for name, arr in arrays.items()}
    return ModelParams(
        conv1=Conv1DParams(t["conv1.kernel"], t["conv1.bias"], "same"),
        conv2=Conv1DParams(t["conv2.kernel"], t["conv2.bias"], "same"),
        lstm_fwd=LSTMParams(t["lstm_fwd.w_input"], t["lstm_fwd.w_recurrent"],
                            t["lstm_fwd.bias"]),
        lstm_bwd=LSTMParams(t["lstm_bwd.w_input"], t["lstm_bwd.w_recurrent"],
                            t["lstm_bwd.bias"]),
        path1=Conv1DParams(t["path1.kernel"], t["path1.bias"], "same"),
        dense1=DenseParams(t["dense1.weight"], t["dense1.bias"]),
        dense_out=DenseParams(t["dense_out.weight"], t["dense_out.bias"]),
        num_classes=num_classes,
    )


def expected_shapes(num_classes: int) -> dict[str, tuple[int, ...]]:
    h4 = 4 * LSTM_UNITS
    return {
        "conv1.kernel": (CONV_KERNEL, 1, CONV_FILTERS),
        "conv1.bias": (CONV_FILTERS,),
        "conv2.kernel": (CONV_KERNEL, CONV_FILTERS, CONV_FILTERS),
        "conv2.bias": (CONV_FILTERS,),
        "lstm_fwd.w_input": (CONV_FILTERS, h4),
        "lstm_fwd.w_recurrent": (LSTM_UNITS, h4),
        "lstm_fwd.bias": (h4,),
        "lstm_bwd.w_input": (CONV_FILTERS, h4),
        "lstm_bwd.w_recurrent": (LSTM_UNITS, h4),
        "lstm_bwd.bias": (h4,),
        "path1.kernel": (1, CONV_FILTERS, SKIP_FILTERS),
        "path1.bias": (SKIP_FILTERS,),
        "dense1.weight": (SKIP_FILTERS, DENSE_UNITS),
        "dense1.bias": (DENSE_UNITS,),
        "dense_out.weight": (DENSE_UNITS, num_classes),
        "dense_out.bias": (num_classes,),
    }


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def _orthogonal_block(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    return (q * np.sign(np.diag(r))).astype(np.float32)


def init_params(cfg: ModelConfig) -> ModelParams:
    """Deterministic parameter initialization.

    Conv/dense/LSTM-input kernels are Glorot-uniform; each HxH gate block
    of the recurrent kernels is drawn orthogonal; biases are zero except
    the LSTM forget-gate slots, which start at 1.0.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    h4 = 4 * LSTM_UNITS
    arrays: dict[str, np.ndarray] = {}

    def conv_kernel(name, k, cin, cout):
        arrays[name] = _glorot(rng, (k, cin, cout), k * cin, k * cout)

    conv_kernel("conv1.kernel", CONV_KERNEL, 1, CONV_FILTERS)
    conv_kernel("conv2.kernel", CONV_KERNEL, CONV_FILTERS, CONV_FILTERS)
    for d in ("lstm_fwd", "lstm_bwd"):
        arrays[f"{d}.w_input"] = _glorot(rng, (CONV_FILTERS, h4),
                                         CONV_FILTERS, h4)
        arrays[f"{d}.w_recurrent"] = np.concatenate(
            [_orthogonal_block(rng, LSTM_UNITS) for _ in range(4)], axis=1)
        bias = np.zeros(h4, dtype=np.float32)
        bias[LSTM_UNITS:2 * LSTM_UNITS] = 1.0
        arrays[f"{d}.bias"] = bias
    conv_kernel("path1.kernel", 1, CONV_FILTERS, SKIP_FILTERS)
    arrays["dense1.weight"] = _glorot(rng, (SKIP_FILTERS, DENSE_UNITS),
                                      SKIP_FILTERS, DENSE_UNITS)
    arrays["dense_out.weight"] = _glorot(rng, (DENSE_UNITS, cfg.num_classes),
                                         DENSE_UNITS, cfg.num_classes)
    for name, shape in expected_shapes(cfg.num_classes).items():
        if name not in arrays:
            arrays[name] = np.zeros(shape, dtype=np.float32)
    return params_from_arrays(arrays, cfg.num_classes)


@dataclass
class ModelCaches:
    conv1: Conv1DCache
    relu1_mask: np.ndarray
    conv2: Conv1DCache
    relu2_mask: np.ndarray
    pool: MaxPoolCache
    bilstm: BiLSTMCache
    path1: Conv1DCache
    gap: GapCache
    dense1: DenseCache
    dense_out: DenseCache
    probs: Tensor


def forward(params: ModelParams, x: Tensor) -> tuple[Tensor, ModelCaches]:
    """Full forward pass; returns class probabilities and layer caches."""
    if x.rank != 2 or x.shape[1] != 1:
        raise DimensionError(f"model input must be (T, 1), got {x.shape}")
    if x.shape[0] < 4:
        raise DimensionError(f"model input length must be >= 4, got {x.shape[0]}")
    a1, c_conv1 = layers.conv1d_forward(x, params.conv1)
    mask1 = a1.data > 0
    r1 = Tensor.wrap(a1.data * mask1)
    a2, c_conv2 = layers.conv1d_forward(r1, params.conv2)
    mask2 = a2.data > 0
    r2 = Tensor.wrap(a2.data * mask2)
    pooled, c_pool = layers.maxpool1d(r2)
    lstm_out, c_lstm = layers.bilstm_forward(pooled, params.lstm_fwd,
                                             params.lstm_bwd)
    skip, c_path = layers.conv1d_forward(pooled, params.path1)
    added = Tensor.wrap(lstm_out.data + skip.data)
    feat, c_gap = layers.global_avg_pool(added)
    d1, c_d1 = layers.dense_forward(feat, params.dense1, activation="relu")
    logits, c_d2 = layers.dense_forward(d1, params.dense_out, activation="none")
    probs = layers.softmax(logits)
    caches = ModelCaches(conv1=c_conv1, relu1_mask=mask1, conv2=c_conv2,
                         relu2_mask=mask2, pool=c_pool, bilstm=c_lstm,
                         path1=c_path, gap=c_gap, dense1=c_d1, dense_out=c_d2,
                         probs=probs)
    return probs, caches


def backward_from_logits(params: ModelParams, caches: ModelCaches,
                         grad_logits: Tensor,
                         capture: dict | None = None) -> ModelParams:
    """Chain of layer backwards given the gradient at the logits.

    Returns parameter gradients in a ModelParams-shaped container. When
    ``capture`` is a dict, the gradients meeting at the residual join are
    recorded in it (keys grad_pooled, grad_pooled_lstm, grad_pooled_skip).
    """
    gd1, gw_out, gb_out = layers.dense_backward(grad_logits, caches.dense_out)
    gfeat, gw_d1, gb_d1 = layers.dense_backward(gd1, caches.dense1)
    gadded = layers.global_avg_pool_backward(gfeat, caches.gap)
    # the residual join routes the same upstream gradient to both branches
    gpooled_lstm, gfwd, gbwd = layers.bilstm_backward(gadded, caches.bilstm)
    gpooled_skip, gk_path, gb_path = layers.conv1d_backward(gadded, caches.path1)
    gpooled = Tensor.wrap(gpooled_lstm.data + gpooled_skip.data)
    if capture is not None:
        capture["grad_pooled"] = gpooled
        capture["grad_pooled_lstm"] = gpooled_lstm
        capture["grad_pooled_skip"] = gpooled_skip
    gr2 = layers.maxpool1d_backward(gpooled, caches.pool)
    ga2 = Tensor.wrap(gr2.data * caches.relu2_mask)
    gr1, gk2, gb2 = layers.conv1d_backward(ga2, caches.conv2)
    ga1 = Tensor.wrap(gr1.data * caches.relu1_mask)
    _, gk1, gb1 = layers.conv1d_backward(ga1, caches.conv1)
    return ModelParams(
        conv1=Conv1DParams(gk1, gb1, "same"),
        conv2=Conv1DParams(gk2, gb2, "same"),
        lstm_fwd=gfwd,
        lstm_bwd=gbwd,
        path1=Conv1DParams(gk_path, gb_path, "same"),
        dense1=DenseParams(gw_d1, gb_d1),
        dense_out=DenseParams(gw_out, gb_out),
        num_classes=params.num_classes,
    )


def backward(params: ModelParams, caches: ModelCaches, grad_probs: Tensor,
             capture: dict | None = None) -> ModelParams:
    """Parameter gradients given the gradient at the probability output."""
    p64 = caches.probs.data.astype(np.float64)
    g64 = grad_probs.data.astype(np.float64)
    grad_logits = (p64 * (g64 - np.dot(g64, p64))).astype(grad_probs.dtype)
    return backward_from_logits(params, caches, Tensor.wrap(grad_logits),
                                capture=capture)


def predict(params: ModelParams, x: Tensor) -> int:
    """Class with the highest probability; ties go to the lowest index."""
    probs, _ = forward(params, x)
    return int(np.argmax(probs.data))


def parameter_count(params: ModelParams) -> int:
    return sum(t.data.size for _, t in named_tensors(params))


def save_checkpoint(params: ModelParams, path: str) -> None:
    """Binary little-endian checkpoint; see load_checkpoint for the layout."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<BB", CHECKPOINT_VERSION, params.num_classes))
    tensors = named_tensors(params)
    buf.write(struct.pack("<I", len(tensors)))
    for name, t in tensors:
        if t.dtype != np.float32:
            raise UsageError(f"checkpoint tensors must be float32, "
                             f"{name} is {t.dtype}")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", t.rank))
        buf.write(struct.pack(f"<{t.rank}I", *t.shape))
        buf.write(t.data.astype("<f4", copy=False).tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


class _Reader:
    def __init__(self, blob: bytes, what: str):
        self.blob = blob
        self.pos = 0
        self.what = what

    def take(self, n: int, field_name: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.what}: truncated while reading "
                              f"{field_name}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, field_name: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), field_name))

    def done(self) -> bool:
        return self.pos == len(self.blob)


def load_checkpoint(path: str, expected_classes: int | None = None) -> ModelParams:
    """Load a checkpoint written by save_checkpoint.

    Layout: magic "EMGC", version byte, u8 num_classes, u32 tensor count,
    then per tensor u16 name length, UTF-8 name, u8 rank, rank u32 dims,
    raw little-endian float32 data. No padding between records.
    """
    with open(path, "rb") as fh:
        rd = _Reader(fh.read(), f"checkpoint {path}")
    if rd.take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError(f"checkpoint {path}: bad magic (expected EMGC)")
    version, num_classes = rd.unpack("<BB", "version/num_classes")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint {path}: unsupported version {version}")
    if num_classes not in VALID_CLASS_COUNTS:
        raise FormatError(f"checkpoint {path}: invalid num_classes "
                          f"{num_classes}")
    if expected_classes is not None and num_classes != expected_classes:
        raise UsageError(
            f"class-count mismatch: checkpoint has {num_classes} classes, "
            f"expected {expected_classes}")
    (count,) = rd.unpack("<I", "tensor count")
    shapes = expected_shapes(num_classes)
    if count != len(shapes):
        raise FormatError(f"checkpoint {path}: tensor count {count}, "
                          f"expected {len(shapes)}")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = rd.unpack("<H", "name length")
        name = rd.take(name_len, "name").decode("utf-8")
        if name not in shapes:
            raise FormatError(f"checkpoint {path}: unknown tensor {name!r}")
        if name in arrays:
            raise FormatError(f"checkpoint {path}: duplicate tensor {name!r}")
        (rank,) = rd.unpack("<B", f"{name} rank")
        dims = rd.unpack(f"<{rank}I", f"{name} dims")
        if dims != shapes[name]:
            raise FormatError(f"checkpoint {path}: tensor {name} has shape "
                              f"{dims}, expected {shapes[name]}")
        n = int(np.prod(dims))
        data = np.frombuffer(rd.take(4 * n, f"{name} data"), dtype="<f4")
        arrays[name] = data.reshape(dims).copy()
    if not rd.done():
        raise FormatError(f"checkpoint {path}: trailing bytes after last "
                          f"tensor")
    return params_from_arrays(arrays, num_classes)


def copy_params(params: ModelParams) -> ModelParams:
    """Deep copy used for best-validation snapshots."""
    arrays = {name: t.data.copy() for name, t in named_tensors(params)}
    return params_from_arrays(arrays, params.num_classes)
