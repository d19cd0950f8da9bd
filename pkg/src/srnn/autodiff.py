"""Dense tensors with tape-based reverse-mode differentiation.

Operations record onto the innermost active :class:`Tape` whenever one of
their inputs requires a gradient.  Outside a tape, operations only compute
values, which is how inference and forecasting run.

    with Tape():
        loss = euclidean_loss(linear(x, W, b), y)
    backward(loss)     # accumulates into W.grad and b.grad

Broadcasting is limited to adding a bias vector to every row.
"""

from __future__ import annotations

from typing import Callable, List, Sequence

import numpy as np

from . import kernels
from .errors import InputError, ShapeError

DEFAULT_DTYPE = np.float64
CE_EPS = 1e-12

_active: List["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "_tape")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.item())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, index):
        return take(self, index)


class Parameter(Tensor):
    """A named leaf whose gradient accumulates across backward calls."""

    __slots__ = ("name", "grad")

    def __init__(self, name: str, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


class Tape:
    """Append-only record of differentiable operations."""

    def __init__(self):
        self.records = []

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)
        return False

    def __len__(self):
        return len(self.records)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(outputs, inputs, backward_fn):
    if not _active or not any(t.requires_grad for t in inputs):
        return
    tape = _active[-1]
    for out in outputs:
        out.requires_grad = True
        out._tape = tape
    tape.records.append((outputs, inputs, backward_fn))


def _shape_error(op, a, b):
    return ShapeError(f"{op}: incompatible shapes {tuple(a.shape)} and {tuple(b.shape)}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return g.reshape(-1, shape[-1]).sum(axis=0).reshape(shape)


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and not (b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]):
        raise _shape_error("add", a, b)
    out = Tensor(a.data + b.data)
    _record((out,), (a, b), lambda g: (g[0], _unbroadcast(g[0], b.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("sub", a, b)
    out = Tensor(a.data - b.data)
    _record((out,), (a, b), lambda g: (g[0], -g[0]))
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("mul", a, b)
    out = Tensor(a.data * b.data)
    _record((out,), (a, b), lambda g: (g[0] * b.data, g[0] * a.data))
    return out


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data * c)
    _record((out,), (a,), lambda g: (g[0] * c,))
    return out


def sum_list(tensors: Sequence) -> Tensor:
    """Left fold of :func:`add` in list order, recorded as one operation."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise InputError("sum_list of an empty list")
    acc = tensors[0].data
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise _shape_error("sum_list", tensors[0], t)
        acc = acc + t.data
    out = Tensor(acc.copy() if len(tensors) == 1 else acc)
    _record((out,), tuple(tensors), lambda g: tuple(g[0] for _ in tensors))
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    out = Tensor(y)
    _record((out,), (a,), lambda g: (g[0] * y * (1.0 - y),))
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y)
    _record((out,), (a,), lambda g: (g[0] * (1.0 - y * y),))
    return out


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def back(g):
        g = g[0]
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    _record((out,), (a,), back)
    return out


# -- structural ----------------------------------------------------------------


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise InputError("concat of an empty list")
    nd = tensors[0].ndim
    ax = axis % nd if nd else 0
    for t in tensors[1:]:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1 :] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1 :]:
            raise _shape_error("concat", tensors[0], t)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=ax))
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def back(g):
        g = g[0]
        return tuple(
            g[(slice(None),) * ax + (slice(int(lo), int(hi)),)] for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    _record((out,), tuple(tensors), back)
    return out


def take(a, index) -> Tensor:
    """Basic (slice/integer) indexing."""
    a = as_tensor(a)
    out = Tensor(np.array(a.data[index]))

    def back(g):
        full = np.zeros_like(a.data)
        full[index] = g[0]
        return (full,)

    _record((out,), (a,), back)
    return out


def slice_axis(a, start: int, stop: int, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    ax = axis % a.ndim
    return take(a, (slice(None),) * ax + (slice(start, stop),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    _record((out,), (a,), lambda g: (g[0].reshape(a.shape),))
    return out


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.array(a.data.sum()))
    _record((out,), (a,), lambda g: (np.full_like(a.data, g[0]),))
    return out


# -- linear algebra ------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """``a @ b`` for a 2-D ``b``; leading axes of ``a`` are batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    out = Tensor(a.data @ b.data)

    def back(g):
        g = g[0]
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    _record((out,), (a, b), back)
    return out


def linear(x, W, b=None) -> Tensor:
    """``x @ W.T + b`` over the last axis of ``x``; ``W`` is ``[out, in]``."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise _shape_error("linear", x, W)
    y = x.data @ W.data.T
    inputs = (x, W)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[0],):
            raise _shape_error("linear bias", W, b)
        y += b.data
        inputs = (x, W, b)
    out = Tensor(y)

    def back(g):
        g = g[0]
        g2 = g.reshape(-1, W.shape[0])
        grads = (g @ W.data, g2.T @ x.data.reshape(-1, W.shape[1]))
        if b is not None:
            grads += (g2.sum(axis=0),)
        return grads

    _record((out,), inputs, back)
    return out


# -- recurrences ---------------------------------------------------------------


def _check_recurrent(op, x, W, U, b, h0, gates):
    if x.ndim != 3 or W.ndim != 2 or x.shape[2] != W.shape[1]:
        raise _shape_error(op, x, W)
    H = U.shape[1]
    if W.shape[0] != gates * H or U.shape != (gates * H, H) or b.shape != (gates * H,):
        raise ShapeError(f"{op}: inconsistent weights W{W.shape} U{U.shape} b{b.shape}")
    if h0.shape != (x.shape[1], H):
        raise _shape_error(op + " state", x, h0)


def lstm_sequence(x, W, U, b, h0, c0):
    """Run an LSTM over ``x[T, B, in]`` from state ``(h0, c0)``.

    Returns ``(hs, cs)``, each ``[T, B, H]``; one tape record covers the
    whole sequence.
    """
    x, W, U, b, h0, c0 = map(as_tensor, (x, W, U, b, h0, c0))
    _check_recurrent("lstm_sequence", x, W, U, b, h0, 4)
    if c0.shape != h0.shape:
        raise _shape_error("lstm_sequence cell state", h0, c0)
    T, B, _ = x.shape
    xw = np.ascontiguousarray(x.data @ W.data.T + b.data)
    Uc = np.ascontiguousarray(U.data)
    c0d = np.ascontiguousarray(c0.data)
    gates, cs, hs = kernels.lstm_forward(xw, Uc, np.ascontiguousarray(h0.data), c0d)
    hs_t, cs_t = Tensor(hs), Tensor(cs)

    def back(g):
        dhs, dcs = g
        dz, dh0, dc0 = kernels.lstm_backward(gates, cs, c0d, Uc, np.ascontiguousarray(dhs), np.ascontiguousarray(dcs))
        dz2 = dz.reshape(T * B, -1)
        hprev = np.concatenate([h0.data[None], hs[:-1]], axis=0).reshape(T * B, -1)
        dx = (dz2 @ W.data).reshape(x.shape)
        return dx, dz2.T @ x.data.reshape(T * B, -1), dz2.T @ hprev, dz2.sum(axis=0), dh0, dc0

    _record((hs_t, cs_t), (x, W, U, b, h0, c0), back)
    return hs_t, cs_t


def rnn_sequence(x, W, U, b, h0) -> Tensor:
    """Vanilla ``h' = tanh(W x + U h + b)`` over ``x[T, B, in]``."""
    x, W, U, b, h0 = map(as_tensor, (x, W, U, b, h0))
    _check_recurrent("rnn_sequence", x, W, U, b, h0, 1)
    T, B, _ = x.shape
    xw = np.ascontiguousarray(x.data @ W.data.T + b.data)
    Uc = np.ascontiguousarray(U.data)
    hs = kernels.rnn_forward(xw, Uc, np.ascontiguousarray(h0.data))
    out = Tensor(hs)

    def back(g):
        dz, dh0 = kernels.rnn_backward(hs, Uc, np.ascontiguousarray(g[0]))
        dz2 = dz.reshape(T * B, -1)
        hprev = np.concatenate([h0.data[None], hs[:-1]], axis=0).reshape(T * B, -1)
        dx = (dz2 @ W.data).reshape(x.shape)
        return dx, dz2.T @ x.data.reshape(T * B, -1), dz2.T @ hprev, dz2.sum(axis=0), dh0

    _record((out,), (x, W, U, b, h0), back)
    return out


# -- losses --------------------------------------------------------------------


def euclidean_loss(pred, target) -> Tensor:
    """``0.5 * sum((pred - target)**2)``; the gradient of ``pred`` is ``pred - target``."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise _shape_error("euclidean_loss", pred, target)
    diff = pred.data - target.data
    out = Tensor(np.array(0.5 * np.sum(diff * diff)))
    _record((out,), (pred, target), lambda g: (g[0] * diff, -g[0] * diff))
    return out


def cross_entropy_loss(probs, class_index) -> Tensor:
    """``-sum(log(probs[..., k] + eps))`` over the leading axes of ``probs``.

    ``class_index`` is an int for a single distribution or an integer array
    matching the leading shape of ``probs``.
    """
    probs = as_tensor(probs)
    idx = np.asarray(class_index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise InputError(f"class indices must be integers, got {idx.dtype}")
    K = probs.shape[-1]
    if idx.shape != probs.shape[:-1]:
        raise ShapeError(f"cross_entropy_loss: indices {idx.shape} do not match probs {probs.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= K):
        raise InputError(f"class index out of range for {K} classes")
    flat = probs.data.reshape(-1, K)
    rows = np.arange(flat.shape[0])
    picked = flat[rows, idx.reshape(-1)]
    out = Tensor(np.array(-np.sum(np.log(picked + CE_EPS))))

    def back(g):
        full = np.zeros_like(flat)
        full[rows, idx.reshape(-1)] = -g[0] / (picked + CE_EPS)
        return (full.reshape(probs.shape),)

    _record((out,), (probs,), back)
    return out


# -- differentiation -----------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate ``d loss / d p`` into ``p.grad`` for every reachable Parameter."""
    if loss.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for outputs, inputs, fn in reversed(tape.records):
        gouts = [grads.get(id(o)) for o in outputs]
        if all(g is None for g in gouts):
            continue
        gouts = [np.zeros_like(o.data) if g is None else g for o, g in zip(outputs, gouts)]
        for inp, gin in zip(inputs, fn(gouts)):
            if gin is None or not inp.requires_grad:
                continue
            if isinstance(inp, Parameter):
                inp.grad += gin
            else:
                key = id(inp)
                prev = grads.get(key)
                grads[key] = gin if prev is None else prev + gin


def gradcheck(f: Callable[[Tensor], Tensor], point, h: float = 1e-3) -> float:
    """Max relative error between tape gradients and central differences.

    Numeric derivatives use the five-point central stencil, whose
    truncation error is O(h^4); with the two-point stencil the roundoff of
    a ``(f+ - f-) / 2h`` quotient swamps gradients near 1e-7.  The
    denominator per element is ``max(|analytic|, |numeric|, 1e-8)``.
    """
    p = Parameter("x", np.array(point, dtype=np.float64))
    return gradcheck_params(lambda: f(p), [p], h)


def gradcheck_params(loss_fn: Callable[[], Tensor], params: Sequence[Parameter], h: float = 1e-3) -> float:
    """Like :func:`gradcheck` but over every element of ``params``.

    ``loss_fn`` reads the parameters' current values and returns a scalar.
    """
    for p in params:
        p.zero_grad()
    with Tape():
        loss = loss_fn()
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            f = []
            for step in (2, 1, -1, -2):
                flat[k] = orig + step * h
                f.append(loss_fn().item())
            flat[k] = orig
            numeric = (-f[0] + 8 * f[1] - 8 * f[2] + f[3]) / (12 * h)
            a = analytic.reshape(-1)[k]
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
        p.zero_grad()
    return worst
