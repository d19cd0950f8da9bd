# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled recurrence kernels; same contract as ``srnn._pykernels``."""

import numpy as np

from cython cimport floating
from libc.math cimport exp, fmax, fmin
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm, sgemm

from . import _pykernels

cdef char _T = 84  # 'T'
cdef char _N = 78  # 'N'


cdef inline void _gemm(char ta, char tb, int m, int n, int k, floating* a, int lda,
                       floating* b, int ldb, floating beta, floating* c, int ldc) noexcept nogil:
    cdef floating alpha = 1.0
    if floating is double:
        dgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)
    else:
        sgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


# z[B,N] += h[B,H] @ U[N,H].T  (row-major arrays, column-major BLAS)
cdef inline void _add_hUt(floating* h, floating* U, floating* z, int B, int H, int N) noexcept nogil:
    _gemm(_T, _N, N, B, H, U, H, h, H, <floating>1.0, z, N)


# out[B,H] = dz[B,N] @ U[N,H]
cdef inline void _dzU(floating* dz, floating* U, floating* out, int B, int H, int N) noexcept nogil:
    _gemm(_N, _N, H, B, N, U, H, dz, N, <floating>0.0, out, H)


# Clamped exp forms: the clamp keeps exp finite and lets the compiler
# vectorize the loops; outside the clamp range both saturate in float64.
cdef inline floating _sig(floating z) noexcept nogil:
    z = fmin(fmax(z, -40.0), 40.0)
    return 1.0 / (1.0 + exp(-z))


cdef inline floating _tanh(floating z) noexcept nogil:
    z = fmin(fmax(z, -20.0), 20.0)
    return 2.0 / (1.0 + exp(-2.0 * z)) - 1.0


def _dtype(floating[:, :, ::1] probe):
    if floating is double:
        return np.float64
    return np.float32


def lstm_forward(floating[:, :, ::1] xw, floating[:, ::1] U, floating[:, ::1] h0, floating[:, ::1] c0):
    cdef Py_ssize_t T = xw.shape[0], B = xw.shape[1], H4 = xw.shape[2]
    cdef Py_ssize_t H = H4 // 4
    if T == 0 or B == 0 or H == 0:
        return _pykernels.lstm_forward(np.asarray(xw), np.asarray(U), np.asarray(h0), np.asarray(c0))
    dt = _dtype(xw)
    gates_a = np.empty((T, B, H4), dtype=dt)
    cs_a = np.empty((T, B, H), dtype=dt)
    hs_a = np.empty((T, B, H), dtype=dt)
    cdef floating[:, :, ::1] gates = gates_a
    cdef floating[:, :, ::1] cs = cs_a
    cdef floating[:, :, ::1] hs = hs_a
    cdef Py_ssize_t t, b, j
    cdef floating* hprev
    cdef floating* cprev
    cdef floating* a
    cdef floating c
    with nogil:
        for t in range(T):
            a = &gates[t, 0, 0]
            memcpy(a, &xw[t, 0, 0], B * H4 * sizeof(floating))
            hprev = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
            cprev = &c0[0, 0] if t == 0 else &cs[t - 1, 0, 0]
            _add_hUt(hprev, &U[0, 0], a, <int>B, <int>H, <int>H4)
            for b in range(B):
                for j in range(3 * H):
                    a[b * H4 + j] = _sig(a[b * H4 + j])
                for j in range(3 * H, H4):
                    a[b * H4 + j] = _tanh(a[b * H4 + j])
                for j in range(H):
                    c = a[b * H4 + H + j] * cprev[b * H + j] + a[b * H4 + j] * a[b * H4 + 3 * H + j]
                    cs[t, b, j] = c
                    hs[t, b, j] = a[b * H4 + 2 * H + j] * _tanh(c)
    return gates_a, cs_a, hs_a


def lstm_backward(floating[:, :, ::1] gates, floating[:, :, ::1] cs, floating[:, ::1] c0,
                  floating[:, ::1] U, floating[:, :, ::1] dhs, floating[:, :, ::1] dcs):
    cdef Py_ssize_t T = gates.shape[0], B = gates.shape[1], H4 = gates.shape[2]
    cdef Py_ssize_t H = H4 // 4
    if T == 0 or B == 0 or H == 0:
        return _pykernels.lstm_backward(np.asarray(gates), np.asarray(cs), np.asarray(c0),
                                        np.asarray(U), np.asarray(dhs), np.asarray(dcs))
    dt = _dtype(gates)
    dz_a = np.empty((T, B, H4), dtype=dt)
    dh_a = np.zeros((B, H), dtype=dt)
    dc_a = np.zeros((B, H), dtype=dt)
    cdef floating[:, :, ::1] dz = dz_a
    cdef floating[:, ::1] dh_next = dh_a
    cdef floating[:, ::1] dc_next = dc_a
    cdef Py_ssize_t t, b, j
    cdef floating ig, fg, og, gg, cp, tc, dh, dc
    cdef floating* a
    cdef floating* d
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                a = &gates[t, b, 0]
                d = &dz[t, b, 0]
                for j in range(H):
                    ig = a[j]
                    fg = a[H + j]
                    og = a[2 * H + j]
                    gg = a[3 * H + j]
                    cp = cs[t - 1, b, j] if t > 0 else c0[b, j]
                    tc = _tanh(cs[t, b, j])
                    dh = dhs[t, b, j] + dh_next[b, j]
                    dc = dcs[t, b, j] + dc_next[b, j] + dh * og * (1.0 - tc * tc)
                    d[j] = dc * gg * ig * (1.0 - ig)
                    d[H + j] = dc * cp * fg * (1.0 - fg)
                    d[2 * H + j] = dh * tc * og * (1.0 - og)
                    d[3 * H + j] = dc * ig * (1.0 - gg * gg)
                    dc_next[b, j] = dc * fg
            _dzU(&dz[t, 0, 0], &U[0, 0], &dh_next[0, 0], <int>B, <int>H, <int>H4)
    return dz_a, dh_a, dc_a


def rnn_forward(floating[:, :, ::1] xw, floating[:, ::1] U, floating[:, ::1] h0):
    cdef Py_ssize_t T = xw.shape[0], B = xw.shape[1], H = xw.shape[2]
    if T == 0 or B == 0 or H == 0:
        return _pykernels.rnn_forward(np.asarray(xw), np.asarray(U), np.asarray(h0))
    hs_a = np.empty((T, B, H), dtype=_dtype(xw))
    cdef floating[:, :, ::1] hs = hs_a
    cdef Py_ssize_t t, k
    cdef floating* row
    with nogil:
        for t in range(T):
            row = &hs[t, 0, 0]
            memcpy(row, &xw[t, 0, 0], B * H * sizeof(floating))
            _add_hUt(&h0[0, 0] if t == 0 else &hs[t - 1, 0, 0], &U[0, 0], row, <int>B, <int>H, <int>H)
            for k in range(B * H):
                row[k] = _tanh(row[k])
    return hs_a


def rnn_backward(floating[:, :, ::1] hs, floating[:, ::1] U, floating[:, :, ::1] dhs):
    cdef Py_ssize_t T = hs.shape[0], B = hs.shape[1], H = hs.shape[2]
    if T == 0 or B == 0 or H == 0:
        return _pykernels.rnn_backward(np.asarray(hs), np.asarray(U), np.asarray(dhs))
    dt = _dtype(hs)
    dz_a = np.empty((T, B, H), dtype=dt)
    dh_a = np.zeros((B, H), dtype=dt)
    cdef floating[:, :, ::1] dz = dz_a
    cdef floating[:, ::1] dh_next = dh_a
    cdef Py_ssize_t t, b, j
    cdef floating y
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for j in range(H):
                    y = hs[t, b, j]
                    dz[t, b, j] = (dhs[t, b, j] + dh_next[b, j]) * (1.0 - y * y)
            _dzU(&dz[t, 0, 0], &U[0, 0], &dh_next[0, 0], <int>B, <int>H, <int>H)
    return dz_a, dh_a
