"""Independent finite-difference oracle for every layer backward.

The oracle perturbs a flat float64 parameter vector with central
differences and compares against the analytic gradients; layer math runs
at float64 storage precision here so the comparison is meaningful at the
1e-4 / 1e-3 thresholds. Non-differentiable points (ReLU kinks, pool ties)
are excluded by margin tests, not by loosening thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from .errors import OracleError
from .model import (ModelConfig, TENSOR_NAMES, backward_from_logits, forward,
                    init_params, named_tensors, params_from_arrays)
from .optim import cross_entropy
from .tensor import Tensor

LAYER_THRESHOLD = 1e-4
END_TO_END_THRESHOLD = 1e-3
STEP_SCALE = 1e-3
REL_FLOOR = 1e-8


def default_steps(theta: np.ndarray) -> np.ndarray:
    """Per-coordinate step 1e-3 * max(1, |theta_i|)."""
    return STEP_SCALE * np.maximum(1.0, np.abs(theta))


def _eval(f, theta: np.ndarray) -> float:
    v = float(f(theta))
    if not np.isfinite(v):
        raise OracleError(f"non-finite function value {v!r} during "
                          f"finite differencing")
    return v


def finite_diff(f, theta, h=None) -> np.ndarray:
    """Central-difference gradient (f(x+h e_i) - f(x-h e_i)) / 2h.

    ``h`` may be a scalar, a per-coordinate array, or None for the default
    step rule. Everything is computed in float64.
    """
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if h is None:
        steps = default_steps(theta)
    else:
        steps = np.broadcast_to(np.asarray(h, dtype=np.float64),
                                theta.shape).copy()
    if np.any(steps <= 0):
        raise OracleError("finite-difference step must be positive")
    grad = np.empty_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        up[i] += steps[i]
        down = theta.copy()
        down[i] -= steps[i]
        grad[i] = (_eval(f, up) - _eval(f, down)) / (2.0 * steps[i])
    return grad


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric),
                                         REL_FLOOR)


@dataclass
class GradCheckReport:
    name: str
    threshold: float
    step_rule: str
    max_rel_error: float
    per_tensor: dict[str, float]
    n_checked: int
    n_skipped: int
    passed: bool

    def to_dict(self) -> dict:
        return {"name": self.name, "threshold": self.threshold,
                "step_rule": self.step_rule,
                "max_rel_error": self.max_rel_error,
                "per_tensor": self.per_tensor, "n_checked": self.n_checked,
                "n_skipped": self.n_skipped, "passed": self.passed}


def check_layer(loss_and_grad, theta0, *, name: str,
                threshold: float = LAYER_THRESHOLD, sections=None,
                skip=None, sample: int | None = None,
                rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_and_grad(theta)`` maps a flat float64 vector to (scalar loss,
    flat analytic gradient). ``sections`` is a list of (tensor name, size)
    pairs describing the layout of theta for per-tensor reporting;
    ``skip`` is an optional boolean mask of coordinates to exclude (margin
    tests); ``sample`` limits the check to that many randomly chosen
    coordinates, for large instances.
    """
    theta0 = np.asarray(theta0, dtype=np.float64).reshape(-1)
    _, analytic = loss_and_grad(theta0)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    if analytic.shape != theta0.shape:
        raise OracleError(f"{name}: analytic gradient has {analytic.size} "
                          f"entries for {theta0.size} parameters")
    steps = default_steps(theta0)

    coords = np.arange(theta0.size)
    if skip is not None:
        coords = coords[~np.asarray(skip, dtype=bool)]
    n_skipped = theta0.size - coords.size
    if sample is not None and sample < coords.size:
        rng = rng or np.random.default_rng(0)
        coords = np.sort(rng.choice(coords, size=sample, replace=False))

    def f(theta):
        return loss_and_grad(theta)[0]

    if sections is None:
        sections = [("theta", theta0.size)]
    bounds = np.cumsum([0] + [size for _, size in sections])
    per_tensor = {sec_name: 0.0 for sec_name, _ in sections}
    max_err = 0.0
    for i in coords:
        up = theta0.copy()
        up[i] += steps[i]
        down = theta0.copy()
        down[i] -= steps[i]
        numeric = (_eval(f, up) - _eval(f, down)) / (2.0 * steps[i])
        err = relative_error(float(analytic[i]), numeric)
        max_err = max(max_err, err)
        sec = int(np.searchsorted(bounds, i, side="right")) - 1
        sec_name = sections[sec][0]
        per_tensor[sec_name] = max(per_tensor[sec_name], err)
    return GradCheckReport(
        name=name, threshold=threshold,
        step_rule=f"{STEP_SCALE:g}*max(1,|theta|)", max_rel_error=max_err,
        per_tensor=per_tensor, n_checked=int(coords.size),
        n_skipped=int(n_skipped), passed=max_err < threshold)


def _flatten(arrays) -> np.ndarray:
    return np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1)
                           for a in arrays])


def _unflatten(theta: np.ndarray, shapes):
    out = []
    pos = 0
    for shape in shapes:
        n = int(np.prod(shape))
        out.append(theta[pos:pos + n].reshape(shape))
        pos += n
    return out


def _t64(arr) -> Tensor:
    return Tensor(np.ascontiguousarray(arr), dtype=np.float64)


def _signed_weights(rng, shape) -> np.ndarray:
    return rng.uniform(0.5, 1.5, shape) * rng.choice([-1.0, 1.0], shape)


def _conv_case(rng, padding: str):
    t_len, cin, cout, k = 8, 2, 3, 3
    x0 = rng.uniform(-1, 1, (t_len, cin))
    w0 = rng.uniform(-1, 1, (k, cin, cout))
    b0 = rng.uniform(-0.5, 0.5, cout)
    t_out = t_len if padding == "same" else t_len - k + 1
    rw = _signed_weights(rng, (t_out, cout))
    shapes = [x0.shape, w0.shape, b0.shape]

    def loss_and_grad(theta):
        x, w, b = _unflatten(theta, shapes)
        p = layers.Conv1DParams(_t64(w), _t64(b), padding)
        y, cache = layers.conv1d_forward(_t64(x), p)
        gx, gw, gb = layers.conv1d_backward(_t64(rw), cache)
        return float((rw * y.data).sum()), _flatten([gx.data, gw.data, gb.data])

    sections = [("x", x0.size), ("kernel", w0.size), ("bias", b0.size)]
    return loss_and_grad, _flatten([x0, w0, b0]), sections, None


def _maxpool_case(rng):
    t_len, chans = 7, 3
    while True:
        x0 = rng.uniform(-1, 1, (t_len, chans))
        pairs = x0[:2 * (t_len // 2)].reshape(-1, 2, chans)
        if np.abs(pairs[:, 0] - pairs[:, 1]).min() > 1e-2:
            break
    rw = _signed_weights(rng, (t_len // 2, chans))

    def loss_and_grad(theta):
        x = theta.reshape(t_len, chans)
        y, cache = layers.maxpool1d(_t64(x))
        gx = layers.maxpool1d_backward(_t64(rw), cache)
        return float((rw * y.data).sum()), gx.data.reshape(-1)

    return loss_and_grad, x0.reshape(-1), [("x", x0.size)], None


def _bilstm_case(rng):
    t_len, cin, hid = 3, 2, 2
    x0 = rng.uniform(-1, 1, (t_len, cin))
    tensors0 = [x0]
    for _ in range(2):
        tensors0 += [rng.uniform(-1, 1, (cin, 4 * hid)),
                     rng.uniform(-1, 1, (hid, 4 * hid)),
                     rng.uniform(-0.5, 0.5, 4 * hid)]
    shapes = [a.shape for a in tensors0]
    rw = _signed_weights(rng, (t_len, 2 * hid))

    def loss_and_grad(theta):
        x, wi_f, wr_f, b_f, wi_b, wr_b, b_b = _unflatten(theta, shapes)
        fwd = layers.LSTMParams(_t64(wi_f), _t64(wr_f), _t64(b_f))
        bwd = layers.LSTMParams(_t64(wi_b), _t64(wr_b), _t64(b_b))
        y, cache = layers.bilstm_forward(_t64(x), fwd, bwd)
        gx, gfwd, gbwd = layers.bilstm_backward(_t64(rw), cache)
        return float((rw * y.data).sum()), _flatten(
            [gx.data, gfwd.w_input.data, gfwd.w_recurrent.data,
             gfwd.bias.data, gbwd.w_input.data, gbwd.w_recurrent.data,
             gbwd.bias.data])

    sections = [("x", x0.size),
                ("fwd.w_input", tensors0[1].size),
                ("fwd.w_recurrent", tensors0[2].size),
                ("fwd.bias", tensors0[3].size),
                ("bwd.w_input", tensors0[4].size),
                ("bwd.w_recurrent", tensors0[5].size),
                ("bwd.bias", tensors0[6].size)]
    return loss_and_grad, _flatten(tensors0), sections, None


def _gap_case(rng):
    t_len, chans = 5, 4
    x0 = rng.uniform(-1, 1, (t_len, chans))
    rw = _signed_weights(rng, chans)

    def loss_and_grad(theta):
        x = theta.reshape(t_len, chans)
        y, cache = layers.global_avg_pool(_t64(x))
        gx = layers.global_avg_pool_backward(_t64(rw), cache)
        return float((rw * y.data).sum()), gx.data.reshape(-1)

    return loss_and_grad, x0.reshape(-1), [("x", x0.size)], None


def _dense_case(rng, activation: str):
    feats, units = 6, 4
    while True:
        x0 = rng.uniform(-1, 1, feats)
        w0 = rng.uniform(-1, 1, (feats, units))
        b0 = rng.uniform(-0.5, 0.5, units)
        pre = x0 @ w0 + b0
        if activation == "none" or np.abs(pre).min() > 5e-3:
            break
    rw = _signed_weights(rng, units)
    shapes = [x0.shape, w0.shape, b0.shape]

    def loss_and_grad(theta):
        x, w, b = _unflatten(theta, shapes)
        p = layers.DenseParams(_t64(w), _t64(b))
        y, cache = layers.dense_forward(_t64(x), p, activation)
        gx, gw, gb = layers.dense_backward(_t64(rw), cache)
        return float((rw * y.data).sum()), _flatten([gx.data, gw.data, gb.data])

    sections = [("x", x0.size), ("weight", w0.size), ("bias", b0.size)]
    return loss_and_grad, _flatten([x0, w0, b0]), sections, None


def _softmax_ce_case(rng):
    c = 4
    z0 = rng.uniform(-2, 2, c)
    target = int(rng.integers(0, c))

    def loss_and_grad(theta):
        probs = layers.softmax(_t64(theta))
        loss, grad_logits = cross_entropy(probs, target)
        return loss, grad_logits.data.astype(np.float64)

    return loss_and_grad, z0, [("logits", c)], None


def end_to_end_case(seed: int, input_length: int = 64,
                    sample: int = 20):
    """Reduced-length full-model gradient check case.

    Returns (loss_and_grad, theta0, sections, sample) over every trainable
    parameter, with the check limited to ``sample`` random coordinates.
    """
    rng = np.random.default_rng([seed, 2])
    cfg = ModelConfig(num_classes=3, input_length=input_length, rng_seed=seed)
    p32 = init_params(cfg)
    arrays0 = [t.data.astype(np.float64) for _, t in named_tensors(p32)]
    shapes = [a.shape for a in arrays0]
    x = _t64(rng.uniform(-1, 1, (input_length, 1)))
    target = int(rng.integers(0, 3))

    def loss_and_grad(theta):
        arrays = dict(zip(TENSOR_NAMES, _unflatten(theta, shapes)))
        params = params_from_arrays(
            {name: np.ascontiguousarray(a) for name, a in arrays.items()}, 3)
        probs, caches = forward(params, x)
        loss, grad_logits = cross_entropy(probs, target)
        grads = backward_from_logits(params, caches, grad_logits)
        return loss, _flatten([g.data for _, g in named_tensors(grads)])

    sections = [(name, int(np.prod(shape)))
                for name, shape in zip(TENSOR_NAMES, shapes)]
    return loss_and_grad, _flatten(arrays0), sections, sample


_LAYER_CASES = (
    ("conv1d_same", lambda rng: _conv_case(rng, "same")),
    ("conv1d_valid", lambda rng: _conv_case(rng, "valid")),
    ("maxpool1d", _maxpool_case),
    ("bilstm", _bilstm_case),
    ("global_avg_pool", _gap_case),
    ("dense_linear", lambda rng: _dense_case(rng, "none")),
    ("dense_relu", lambda rng: _dense_case(rng, "relu")),
    ("softmax_cross_entropy", _softmax_ce_case),
)


def run_battery(seeds=(0, 1, 2), include_end_to_end: bool = True) -> list[GradCheckReport]:
    """The standard gradient-check suite: every layer at 1e-4 for each
    seed, plus the reduced end-to-end model at 1e-3."""
    reports = []
    for seed in seeds:
        for idx, (name, builder) in enumerate(_LAYER_CASES):
            rng = np.random.default_rng([seed, idx])
            loss_and_grad, theta0, sections, sample = builder(rng)
            reports.append(check_layer(
                loss_and_grad, theta0, name=f"{name}[seed={seed}]",
                threshold=LAYER_THRESHOLD, sections=sections, sample=sample,
                rng=rng))
    if include_end_to_end:
        for seed in seeds:
            loss_and_grad, theta0, sections, sample = end_to_end_case(seed)
            reports.append(check_layer(
                loss_and_grad, theta0, name=f"end_to_end[seed={seed}]",
                threshold=END_TO_END_THRESHOLD, sections=sections,
                sample=sample, rng=np.random.default_rng([seed, 99])))
    return reports
