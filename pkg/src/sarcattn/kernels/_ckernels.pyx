# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel core.

Same contract as pykernels, with the elementwise chains fused into C
loops. Matrix products stay on numpy/BLAS in both backends, so the two
implementations agree to rounding (the libm/SIMD exp and tanh may differ
in the last ulp from numpy's vectorized versions).
"""

import numpy as np

from libc.math cimport exp, tanh, sqrt, INFINITY

BACKEND = "cython"


cdef inline double _sig(double x) noexcept nogil:
    cdef double e
    if x >= 0.0:
        e = exp(-x)
        return 1.0 / (1.0 + e)
    e = exp(x)
    return e / (1.0 + e)


def masked_softmax_fwd(double[:, ::1] x, mask):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1]
    out_np = np.empty((rows, n))
    cdef double[:, ::1] out = out_np
    cdef const unsigned char[:, ::1] m
    cdef Py_ssize_t i, j
    cdef double mx, s
    if mask is None:
        with nogil:
            for i in range(rows):
                mx = x[i, 0]
                for j in range(1, n):
                    if x[i, j] > mx:
                        mx = x[i, j]
                s = 0.0
                for j in range(n):
                    out[i, j] = exp(x[i, j] - mx)
                    s += out[i, j]
                for j in range(n):
                    out[i, j] /= s
    else:
        m = mask
        with nogil:
            for i in range(rows):
                mx = -INFINITY
                for j in range(n):
                    if m[i, j] and x[i, j] > mx:
                        mx = x[i, j]
                s = 0.0
                for j in range(n):
                    if m[i, j]:
                        out[i, j] = exp(x[i, j] - mx)
                        s += out[i, j]
                    else:
                        out[i, j] = 0.0
                for j in range(n):
                    out[i, j] /= s
    return out_np


def softmax_bwd(double[:, ::1] p, double[:, ::1] grad):
    cdef Py_ssize_t rows = p.shape[0], n = p.shape[1]
    out_np = np.empty((rows, n))
    cdef double[:, ::1] out = out_np
    cdef Py_ssize_t i, j
    cdef double inner
    with nogil:
        for i in range(rows):
            inner = 0.0
            for j in range(n):
                inner += grad[i, j] * p[i, j]
            for j in range(n):
                out[i, j] = p[i, j] * (grad[i, j] - inner)
    return out_np


def layernorm_fwd(double[:, ::1] x, double[::1] gain, double[::1] bias,
                  double eps):
    cdef Py_ssize_t rows = x.shape[0], d = x.shape[1]
    y_np = np.empty((rows, d))
    xhat_np = np.empty((rows, d))
    inv_np = np.empty((rows, 1))
    cdef double[:, ::1] y = y_np, xhat = xhat_np, inv = inv_np
    cdef Py_ssize_t i, j
    cdef double mu, var, s, c, istd
    with nogil:
        for i in range(rows):
            s = 0.0
            for j in range(d):
                s += x[i, j]
            mu = s / d
            var = 0.0
            for j in range(d):
                c = x[i, j] - mu
                var += c * c
            var /= d
            istd = 1.0 / sqrt(var + eps)
            inv[i, 0] = istd
            for j in range(d):
                xhat[i, j] = (x[i, j] - mu) * istd
                y[i, j] = xhat[i, j] * gain[j] + bias[j]
    return y_np, xhat_np, inv_np


def layernorm_bwd(double[:, ::1] grad, double[:, ::1] xhat,
                  double[:, ::1] inv_std, double[::1] gain):
    cdef Py_ssize_t rows = grad.shape[0], d = grad.shape[1]
    dx_np = np.empty((rows, d))
    dgain_np = np.zeros(d)
    dbias_np = np.zeros(d)
    cdef double[:, ::1] dx = dx_np
    cdef double[::1] dgain = dgain_np, dbias = dbias_np
    cdef Py_ssize_t i, j
    cdef double m1, m2, dxh
    with nogil:
        for i in range(rows):
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                dxh = grad[i, j] * gain[j]
                m1 += dxh
                m2 += dxh * xhat[i, j]
            m1 /= d
            m2 /= d
            for j in range(d):
                dxh = grad[i, j] * gain[j]
                dx[i, j] = inv_std[i, 0] * (dxh - m1 - xhat[i, j] * m2)
                dgain[j] += grad[i, j] * xhat[i, j]
                dbias[j] += grad[i, j]
    return dx_np, dgain_np, dbias_np


cdef void _gates(double[:, :] xg_t, double[:, :] pre_r, double[:, :] pre_z,
                 double[:, :] h, double[:, :] r_out, double[:, :] z_out,
                 double[:, ::1] rh_out) noexcept nogil:
    # r = sig(xg_r + h Ur), z = sig(xg_z + h Uz), rh = r * h
    cdef Py_ssize_t b = h.shape[0], u = h.shape[1]
    cdef Py_ssize_t i, j
    cdef double r
    for i in range(b):
        for j in range(u):
            r = _sig(xg_t[i, j] + pre_r[i, j])
            r_out[i, j] = r
            rh_out[i, j] = r * h[i, j]
            z_out[i, j] = _sig(xg_t[i, u + j] + pre_z[i, j])


cdef void _cell(double[:, :] xg_t, double[:, :] mh, double[:, :] z,
                double[:, ::1] h, double[:, :] hc_out,
                const long long[::1] lengths, Py_ssize_t t) noexcept nogil:
    # hc = tanh(xg_h + (r*h) Uh); h <- z*h + (1-z)*hc where step t is active
    cdef Py_ssize_t b = h.shape[0], u = h.shape[1]
    cdef Py_ssize_t i, j
    cdef double hc
    for i in range(b):
        if t < lengths[i]:
            for j in range(u):
                hc = tanh(xg_t[i, 2 * u + j] + mh[i, j])
                hc_out[i, j] = hc
                h[i, j] = z[i, j] * h[i, j] + (1.0 - z[i, j]) * hc
        else:
            for j in range(u):
                hc_out[i, j] = tanh(xg_t[i, 2 * u + j] + mh[i, j])


def gru_seq_fwd(xg, u_r, u_z, u_h, lengths, reverse):
    cdef Py_ssize_t B = xg.shape[0], N = xg.shape[1], u = xg.shape[2] // 3
    h_np = np.zeros((B, u))
    r_all = np.empty((B, N, u))
    z_all = np.empty((B, N, u))
    hc_all = np.empty((B, N, u))
    hp_all = np.empty((B, N, u))
    rh = np.empty((B, u))
    lens = np.ascontiguousarray(lengths, dtype=np.int64)
    cdef const long long[::1] lens_v = lens
    steps = range(N - 1, -1, -1) if reverse else range(N)
    for t in steps:
        hp_all[:, t] = h_np
        pre_r = h_np @ u_r
        pre_z = h_np @ u_z
        _gates(xg[:, t], pre_r, pre_z, h_np, r_all[:, t], z_all[:, t], rh)
        mh = rh @ u_h
        _cell(xg[:, t], mh, z_all[:, t], h_np, hc_all[:, t], lens_v, t)
    return h_np, (r_all, z_all, hc_all, hp_all)


cdef void _bwd_gates(double[:, :] dh, double[:, :] z, double[:, :] hc,
                     double[:, :] hp, double[:, :] dpre_z,
                     double[:, :] dpre_h, const long long[::1] lengths,
                     Py_ssize_t t) noexcept nogil:
    # dpre_h = dh*(1-z)*(1-hc^2); dpre_z = dh*(hp-hc)*z*(1-z); 0 when inactive
    cdef Py_ssize_t b = dh.shape[0], u = dh.shape[1]
    cdef Py_ssize_t i, j
    for i in range(b):
        if t < lengths[i]:
            for j in range(u):
                dpre_h[i, j] = dh[i, j] * (1.0 - z[i, j]) \
                    * (1.0 - hc[i, j] * hc[i, j])
                dpre_z[i, j] = dh[i, j] * (hp[i, j] - hc[i, j]) \
                    * z[i, j] * (1.0 - z[i, j])
        else:
            for j in range(u):
                dpre_h[i, j] = 0.0
                dpre_z[i, j] = 0.0


cdef void _bwd_prer(double[:, :] drh, double[:, :] r, double[:, :] hp,
                    double[:, :] dpre_r, double[:, ::1] rh) noexcept nogil:
    # dpre_r = drh*hp*r*(1-r); rh = r*hp (for the dU_h product). Inactive
    # rows already have drh == 0, so dpre_r stays 0 there.
    cdef Py_ssize_t b = r.shape[0], u = r.shape[1]
    cdef Py_ssize_t i, j
    for i in range(b):
        for j in range(u):
            dpre_r[i, j] = drh[i, j] * hp[i, j] * r[i, j] * (1.0 - r[i, j])
            rh[i, j] = r[i, j] * hp[i, j]


cdef void _bwd_dh(double[:, ::1] dh, double[:, :] z, double[:, :] drh,
                  double[:, :] r, double[:, :] dterm,
                  const long long[::1] lengths, Py_ssize_t t) noexcept nogil:
    # dh <- dh*z + drh*r + dterm on active rows, unchanged otherwise
    cdef Py_ssize_t b = dh.shape[0], u = dh.shape[1]
    cdef Py_ssize_t i, j
    for i in range(b):
        if t < lengths[i]:
            for j in range(u):
                dh[i, j] = dh[i, j] * z[i, j] + drh[i, j] * r[i, j] \
                    + dterm[i, j]


def gru_seq_bwd(grad, u_r, u_z, u_h, lengths, reverse, cache):
    r_all, z_all, hc_all, hp_all = cache
    cdef Py_ssize_t B = r_all.shape[0], N = r_all.shape[1], u = r_all.shape[2]
    dh = np.ascontiguousarray(grad).copy()
    dxg = np.zeros((B, N, 3 * u))
    du_r = np.zeros_like(u_r)
    du_z = np.zeros_like(u_z)
    du_h = np.zeros_like(u_h)
    rh = np.empty((B, u))
    lens = np.ascontiguousarray(lengths, dtype=np.int64)
    cdef const long long[::1] lens_v = lens
    u_rT = np.ascontiguousarray(u_r.T)
    u_zT = np.ascontiguousarray(u_z.T)
    u_hT = np.ascontiguousarray(u_h.T)
    steps = range(N) if reverse else range(N - 1, -1, -1)
    for t in steps:
        r = r_all[:, t]
        z = z_all[:, t]
        hc = hc_all[:, t]
        hp = hp_all[:, t]
        dpre_r = dxg[:, t, :u]
        dpre_z = dxg[:, t, u:2 * u]
        dpre_h = dxg[:, t, 2 * u:]
        _bwd_gates(dh, z, hc, hp, dpre_z, dpre_h, lens_v, t)
        drh = dpre_h @ u_hT
        _bwd_prer(drh, r, hp, dpre_r, rh)
        dterm = dpre_r @ u_rT + dpre_z @ u_zT
        _bwd_dh(dh, z, drh, r, dterm, lens_v, t)
        du_h += rh.T @ dpre_h
        du_r += hp.T @ dpre_r
        du_z += hp.T @ dpre_z
    return dxg, du_r, du_z, du_h
