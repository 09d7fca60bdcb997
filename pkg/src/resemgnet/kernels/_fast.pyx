# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Mirrors numpy_backend: storage in the caller's precision (float32 or
float64 via the fused type), all reductions accumulated in double, and
recurrent state rounded to storage precision each timestep.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh

ctypedef fused real:
    float
    double


cdef inline double _sigmoid(double z) noexcept nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


def conv1d_forward(real[:, ::1] x, real[:, :, ::1] kernel, real[::1] bias,
                   bint same):
    cdef Py_ssize_t t_in = x.shape[0], cin = x.shape[1]
    cdef Py_ssize_t k_taps = kernel.shape[0], cout = kernel.shape[2]
    cdef Py_ssize_t off = (k_taps - 1) // 2 if same else 0
    cdef Py_ssize_t t_out = t_in if same else t_in - k_taps + 1
    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    y_arr = np.empty((t_out, cout), dtype=dt)
    cdef real[:, ::1] y = y_arr
    acc_arr = np.empty(cout, dtype=np.float64)
    cdef double[::1] acc = acc_arr
    cdef Py_ssize_t t, k, ci, co, src
    cdef double xv
    with nogil:
        for t in range(t_out):
            for co in range(cout):
                acc[co] = <double> bias[co]
            for k in range(k_taps):
                src = t + k - off
                if src < 0 or src >= t_in:
                    continue
                for ci in range(cin):
                    xv = <double> x[src, ci]
                    for co in range(cout):
                        acc[co] += xv * <double> kernel[k, ci, co]
            for co in range(cout):
                y[t, co] = <real> acc[co]
    return y_arr


def conv1d_backward(real[:, ::1] grad_y, real[:, ::1] x,
                    real[:, :, ::1] kernel, bint same):
    cdef Py_ssize_t t_in = x.shape[0], cin = x.shape[1]
    cdef Py_ssize_t k_taps = kernel.shape[0], cout = kernel.shape[2]
    cdef Py_ssize_t t_out = grad_y.shape[0]
    cdef Py_ssize_t off = (k_taps - 1) // 2 if same else 0
    gx_arr = np.zeros((t_in, cin), dtype=np.float64)
    gw_arr = np.zeros((k_taps, cin, cout), dtype=np.float64)
    gb_arr = np.zeros(cout, dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t t, k, ci, co, src
    cdef double xv, gyv, s
    with nogil:
        for t in range(t_out):
            for co in range(cout):
                gb[co] += <double> grad_y[t, co]
            for k in range(k_taps):
                src = t + k - off
                if src < 0 or src >= t_in:
                    continue
                for ci in range(cin):
                    xv = <double> x[src, ci]
                    s = 0.0
                    for co in range(cout):
                        gyv = <double> grad_y[t, co]
                        gw[k, ci, co] += gyv * xv
                        s += gyv * <double> kernel[k, ci, co]
                    gx[src, ci] += s
    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    return gx_arr.astype(dt), gw_arr.astype(dt), gb_arr.astype(dt)


def maxpool2_forward(real[:, ::1] x):
    cdef Py_ssize_t t_in = x.shape[0], chans = x.shape[1]
    cdef Py_ssize_t t_out = t_in // 2
    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    y_arr = np.empty((t_out, chans), dtype=dt)
    idx_arr = np.empty((t_out, chans), dtype=np.int64)
    cdef real[:, ::1] y = y_arr
    cdef cnp.int64_t[:, ::1] idx = idx_arr
    cdef Py_ssize_t t, ci
    cdef real a, b
    with nogil:
        for t in range(t_out):
            for ci in range(chans):
                a = x[2 * t, ci]
                b = x[2 * t + 1, ci]
                if b > a:
                    y[t, ci] = b
                    idx[t, ci] = 1
                else:
                    y[t, ci] = a
                    idx[t, ci] = 0
    return y_arr, idx_arr


def maxpool2_backward(real[:, ::1] grad_y, cnp.int64_t[:, ::1] idx, Py_ssize_t t_in):
    cdef Py_ssize_t t_out = grad_y.shape[0], chans = grad_y.shape[1]
    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    gx_arr = np.zeros((t_in, chans), dtype=dt)
    cdef real[:, ::1] gx = gx_arr
    cdef Py_ssize_t t, ci
    with nogil:
        for t in range(t_out):
            for ci in range(chans):
                gx[2 * t + idx[t, ci], ci] = grad_y[t, ci]
    return gx_arr


def lstm_recurrence_forward(real[:, ::1] xw, real[:, ::1] w_rec):
    cdef Py_ssize_t t_len = xw.shape[0], h4 = xw.shape[1]
    cdef Py_ssize_t hid = h4 // 4
    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    h_arr = np.empty((t_len, hid), dtype=dt)
    gates_arr = np.empty((t_len, h4), dtype=dt)
    c_arr = np.empty((t_len, hid), dtype=dt)
    tanhc_arr = np.empty((t_len, hid), dtype=dt)
    cdef real[:, ::1] h = h_arr
    cdef real[:, ::1] gates = gates_arr
    cdef real[:, ::1] c = c_arr
    cdef real[:, ::1] tanh_c = tanhc_arr
    pre_arr = np.empty(h4, dtype=np.float64)
    hprev_arr = np.zeros(hid, dtype=np.float64)
    cprev_arr = np.zeros(hid, dtype=np.float64)
    cdef double[::1] pre = pre_arr
    cdef double[::1] h_prev = hprev_arr
    cdef double[::1] c_prev = cprev_arr
    cdef Py_ssize_t t, j, u
    cdef double hv, cv
    with nogil:
        for t in range(t_len):
            for u in range(h4):
                pre[u] = <double> xw[t, u]
            for j in range(hid):
                hv = h_prev[j]
                if hv != 0.0:
                    for u in range(h4):
                        pre[u] += hv * <double> w_rec[j, u]
            for j in range(hid):
                gates[t, j] = <real> _sigmoid(pre[j])
                gates[t, hid + j] = <real> _sigmoid(pre[hid + j])
                gates[t, 2 * hid + j] = <real> tanh(pre[2 * hid + j])
                gates[t, 3 * hid + j] = <real> _sigmoid(pre[3 * hid + j])
            for j in range(hid):
                cv = (<double> gates[t, hid + j]) * c_prev[j] + \
                     (<double> gates[t, j]) * (<double> gates[t, 2 * hid + j])
                c[t, j] = <real> cv
                c_prev[j] = <double> c[t, j]
                tanh_c[t, j] = <real> tanh(c_prev[j])
                h[t, j] = <real> ((<double> gates[t, 3 * hid + j]) *
                                  (<double> tanh_c[t, j]))
                h_prev[j] = <double> h[t, j]
    return h_arr, gates_arr, c_arr, tanhc_arr


def lstm_recurrence_backward(real[:, ::1] grad_h, real[:, ::1] w_rec,
                             real[:, ::1] gates, real[:, ::1] c,
                             real[:, ::1] tanh_c):
    cdef Py_ssize_t t_len = grad_h.shape[0], hid = grad_h.shape[1]
    cdef Py_ssize_t h4 = 4 * hid
    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    dpre_arr = np.empty((t_len, h4), dtype=dt)
    cdef real[:, ::1] dpre = dpre_arr
    buf_arr = np.empty(h4, dtype=np.float64)
    dhc_arr = np.zeros(hid, dtype=np.float64)
    dcc_arr = np.zeros(hid, dtype=np.float64)
    cdef double[::1] dpre_t = buf_arr
    cdef double[::1] dh_carry = dhc_arr
    cdef double[::1] dc_carry = dcc_arr
    cdef Py_ssize_t t, j, u
    cdef double iv, fv, gv, ov, th, dh, do_, dc, cp, s
    with nogil:
        for t in range(t_len - 1, -1, -1):
            for j in range(hid):
                iv = <double> gates[t, j]
                fv = <double> gates[t, hid + j]
                gv = <double> gates[t, 2 * hid + j]
                ov = <double> gates[t, 3 * hid + j]
                th = <double> tanh_c[t, j]
                dh = <double> grad_h[t, j] + dh_carry[j]
                do_ = dh * th
                dc = dh * ov * (1.0 - th * th) + dc_carry[j]
                cp = <double> c[t - 1, j] if t > 0 else 0.0
                dpre_t[j] = dc * gv * iv * (1.0 - iv)
                dpre_t[hid + j] = dc * cp * fv * (1.0 - fv)
                dpre_t[2 * hid + j] = dc * iv * (1.0 - gv * gv)
                dpre_t[3 * hid + j] = do_ * ov * (1.0 - ov)
                dc_carry[j] = dc * fv
            for j in range(hid):
                s = 0.0
                for u in range(h4):
                    s += (<double> w_rec[j, u]) * dpre_t[u]
                dh_carry[j] = s
            for u in range(h4):
                dpre[t, u] = <real> dpre_t[u]
    return dpre_arr
