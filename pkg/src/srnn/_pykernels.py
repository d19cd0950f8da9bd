"""Pure NumPy recurrence kernels.

Reference implementation of the sequential part of the LSTM and vanilla RNN
layers; the compiled ``_ckernels`` module mirrors these signatures.  Input
projections ``xw = x @ W.T + b`` are computed by the caller for all
timesteps at once, only the ``h @ U.T`` recursion runs here.

Gate layout along the last axis of ``xw``/``gates`` is ``i, f, o, g``.
"""

import numpy as np


def _sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def lstm_forward(xw, U, h0, c0):
    T, B, H4 = xw.shape
    H = H4 // 4
    gates = np.empty_like(xw)
    cs = np.empty((T, B, H), dtype=xw.dtype)
    hs = np.empty((T, B, H), dtype=xw.dtype)
    h, c = h0, c0
    Ut = U.T
    for t in range(T):
        z = xw[t] + h @ Ut
        a = gates[t]
        a[:, : 3 * H] = _sigmoid(z[:, : 3 * H])
        a[:, 3 * H :] = np.tanh(z[:, 3 * H :])
        c = a[:, H : 2 * H] * c + a[:, :H] * a[:, 3 * H :]
        h = a[:, 2 * H : 3 * H] * np.tanh(c)
        cs[t] = c
        hs[t] = h
    return gates, cs, hs


def lstm_backward(gates, cs, c0, U, dhs, dcs):
    """Returns ``(dz, dh0, dc0)`` with ``dz`` the gradient of the gate pre-activations."""
    T, B, H4 = gates.shape
    H = H4 // 4
    dz = np.empty_like(gates)
    dh_next = np.zeros((B, H), dtype=gates.dtype)
    dc_next = np.zeros((B, H), dtype=gates.dtype)
    for t in range(T - 1, -1, -1):
        a = gates[t]
        i, f, o, g = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        c_prev = cs[t - 1] if t > 0 else c0
        tc = np.tanh(cs[t])
        dh = dhs[t] + dh_next
        dc = dcs[t] + dc_next + dh * o * (1.0 - tc * tc)
        d = dz[t]
        d[:, :H] = dc * g * i * (1.0 - i)
        d[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        d[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        d[:, 3 * H :] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = d @ U
    return dz, dh_next, dc_next


def rnn_forward(xw, U, h0):
    T, B, H = xw.shape
    hs = np.empty_like(xw)
    h = h0
    Ut = U.T
    for t in range(T):
        h = np.tanh(xw[t] + h @ Ut)
        hs[t] = h
    return hs


def rnn_backward(hs, U, dhs):
    T, B, H = hs.shape
    dz = np.empty_like(hs)
    dh_next = np.zeros((B, H), dtype=hs.dtype)
    for t in range(T - 1, -1, -1):
        dh = dhs[t] + dh_next
        dz[t] = dh * (1.0 - hs[t] * hs[t])
        dh_next = dz[t] @ U
    return dz, dh_next
