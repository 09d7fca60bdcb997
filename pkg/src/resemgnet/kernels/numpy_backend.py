"""Pure-numpy implementations of the hot kernels.

Semantics shared with the compiled backend: values live in the storage
precision of the input arrays (float32 in production, float64 under the
gradient-check harness), every dot-product reduction accumulates in
float64, and recurrent state is rounded back to storage precision at each
timestep before it feeds the next one.

Gate column layout for the LSTM kernels is [input | forget | candidate |
output], each block of width H.
"""

import numpy as np

from ..mathutil import sigmoid


def _f64(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float64, copy=False)


def conv1d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
                   same: bool) -> np.ndarray:
    """Cross-correlation of x (T, Cin) with kernel (K, Cin, Cout).

    Same padding centers the kernel with offset (K-1)//2 and treats
    out-of-range samples as zero; valid padding yields T-K+1 outputs.
    """
    t_in, cin = x.shape
    k_taps, _, cout = kernel.shape
    x64 = _f64(x)
    w64 = _f64(kernel)
    if same:
        off = (k_taps - 1) // 2
        xp = np.zeros((t_in + k_taps - 1, cin), dtype=np.float64)
        xp[off:off + t_in] = x64
        t_out = t_in
    else:
        xp = x64
        t_out = t_in - k_taps + 1
    y = np.repeat(_f64(bias)[None, :], t_out, axis=0)
    for k in range(k_taps):
        y += xp[k:k + t_out] @ w64[k]
    return y.astype(x.dtype, copy=False)


def conv1d_backward(grad_y: np.ndarray, x: np.ndarray, kernel: np.ndarray,
                    same: bool):
    """Gradients of conv1d_forward w.r.t. input, kernel and bias."""
    t_in, cin = x.shape
    k_taps, _, cout = kernel.shape
    t_out = grad_y.shape[0]
    gy64 = _f64(grad_y)
    w64 = _f64(kernel)
    if same:
        off = (k_taps - 1) // 2
        xp = np.zeros((t_in + k_taps - 1, cin), dtype=np.float64)
        xp[off:off + t_in] = _f64(x)
        gxp = np.zeros_like(xp)
    else:
        off = 0
        xp = _f64(x)
        gxp = np.zeros((t_in, cin), dtype=np.float64)
    gw = np.empty((k_taps, cin, cout), dtype=np.float64)
    for k in range(k_taps):
        gxp[k:k + t_out] += gy64 @ w64[k].T
        gw[k] = xp[k:k + t_out].T @ gy64
    gb = gy64.sum(axis=0)
    gx = gxp[off:off + t_in] if same else gxp
    dt = x.dtype
    return gx.astype(dt), gw.astype(dt), gb.astype(dt)


def maxpool2_forward(x: np.ndarray):
    """Pool-2 max over time; returns pooled values and argmax offsets.

    A trailing odd sample is dropped. Ties go to the earlier index
    (numpy argmax picks the first maximum).
    """
    t_in, chans = x.shape
    t_out = t_in // 2
    xr = x[:2 * t_out].reshape(t_out, 2, chans)
    idx = xr.argmax(axis=1).astype(np.int64)
    y = np.take_along_axis(xr, idx[:, None, :], axis=1)[:, 0, :]
    return np.ascontiguousarray(y), idx


def maxpool2_backward(grad_y: np.ndarray, idx: np.ndarray, t_in: int) -> np.ndarray:
    t_out, chans = grad_y.shape
    gxr = np.zeros((t_out, 2, chans), dtype=grad_y.dtype)
    np.put_along_axis(gxr, idx[:, None, :], grad_y[:, None, :], axis=1)
    gx = np.zeros((t_in, chans), dtype=grad_y.dtype)
    gx[:2 * t_out] = gxr.reshape(2 * t_out, chans)
    return gx


def lstm_recurrence_forward(xw: np.ndarray, w_rec: np.ndarray):
    """Run the sequential LSTM recurrence.

    xw is the precomputed input contribution x @ w_input + bias, shape
    (T, 4H). Initial hidden and cell states are zero. Returns the hidden
    sequence plus the cached post-activation gates, cell states and
    tanh(cell) needed by the backward pass.
    """
    t_len, h4 = xw.shape
    hid = h4 // 4
    dt = xw.dtype
    h = np.empty((t_len, hid), dtype=dt)
    gates = np.empty((t_len, h4), dtype=dt)
    c = np.empty((t_len, hid), dtype=dt)
    tanh_c = np.empty((t_len, hid), dtype=dt)
    w64 = _f64(w_rec)
    h_prev = np.zeros(hid, dtype=np.float64)
    c_prev = np.zeros(hid, dtype=np.float64)
    for t in range(t_len):
        pre = _f64(xw[t]) + h_prev @ w64
        gates[t, :2 * hid] = sigmoid(pre[:2 * hid])
        gates[t, 2 * hid:3 * hid] = np.tanh(pre[2 * hid:3 * hid])
        gates[t, 3 * hid:] = sigmoid(pre[3 * hid:])
        g64 = _f64(gates[t])
        c[t] = g64[hid:2 * hid] * c_prev + g64[:hid] * g64[2 * hid:3 * hid]
        c_prev = _f64(c[t])
        tanh_c[t] = np.tanh(c_prev)
        h[t] = g64[3 * hid:] * _f64(tanh_c[t])
        h_prev = _f64(h[t])
    return h, gates, c, tanh_c


def lstm_recurrence_backward(grad_h: np.ndarray, w_rec: np.ndarray,
                             gates: np.ndarray, c: np.ndarray,
                             tanh_c: np.ndarray) -> np.ndarray:
    """Backpropagate through the recurrence.

    Returns the gradient at the pre-activation gate inputs, shape (T, 4H);
    the caller turns that into weight/bias/input gradients with three
    matrix products.
    """
    t_len, hid = grad_h.shape
    w64 = _f64(w_rec)
    dpre = np.empty((t_len, 4 * hid), dtype=grad_h.dtype)
    dh_carry = np.zeros(hid, dtype=np.float64)
    dc_carry = np.zeros(hid, dtype=np.float64)
    for t in range(t_len - 1, -1, -1):
        g64 = _f64(gates[t])
        i = g64[:hid]
        f = g64[hid:2 * hid]
        g = g64[2 * hid:3 * hid]
        o = g64[3 * hid:]
        th = _f64(tanh_c[t])
        dh = _f64(grad_h[t]) + dh_carry
        do = dh * th
        dc = dh * o * (1.0 - th * th) + dc_carry
        c_prev = _f64(c[t - 1]) if t > 0 else np.zeros(hid, dtype=np.float64)
        dpre_t = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            do * o * (1.0 - o),
        ])
        dc_carry = dc * f
        dh_carry = w64 @ dpre_t
        dpre[t] = dpre_t
    return dpre
