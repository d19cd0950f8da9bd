"""FC, vanilla RNN and LSTM layers stacked into units with skip connections.

With skip connections on, the (FC-transformed) raw input feeds every layer
of the recurrent stack and every recurrent output feeds what follows the
stack.  Units always run over time-major ``[T, B, features]`` tensors; a
single step is the ``T == 1`` case.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .compiler import FC, LSTM, RNN, SOFTMAX, PlannedLayer, UnitSpec, unit_layout
from .errors import ShapeError

INIT_SCALE = 0.08
FORGET_BIAS = 1.0


class FCLayer:
    def __init__(self, prefix, in_dim, width, activation, dtype):
        self.activation = activation
        self.W = Parameter(f"{prefix}/W", np.zeros((width, in_dim)), dtype=dtype)
        self.b = Parameter(f"{prefix}/b", np.zeros(width), dtype=dtype)

    @property
    def params(self):
        return [self.W, self.b]

    def __call__(self, x):
        y = ad.linear(x, self.W, self.b)
        if self.activation == "tanh":
            return ad.tanh(y)
        if self.activation == "softmax":
            return ad.softmax(y, axis=-1)
        return y


class RNNLayer:
    def __init__(self, prefix, in_dim, width, dtype):
        self.width = width
        self.W = Parameter(f"{prefix}/W", np.zeros((width, in_dim)), dtype=dtype)
        self.U = Parameter(f"{prefix}/U", np.zeros((width, width)), dtype=dtype)
        self.b = Parameter(f"{prefix}/b", np.zeros(width), dtype=dtype)

    @property
    def params(self):
        return [self.W, self.U, self.b]

    def __call__(self, x, state):
        hs = ad.rnn_sequence(x, self.W, self.U, self.b, state[0])
        return hs, None, (ad.take(hs, -1), None)


class LSTMCell:
    """Standard LSTM without peepholes.

    Gate weights are stored stacked as ``W[4H, in]``, ``U[4H, H]`` and
    ``b[4H]`` in the order input, forget, output, candidate.
    """

    def __init__(self, prefix, in_dim, width, dtype):
        self.width = width
        self.W = Parameter(f"{prefix}/W", np.zeros((4 * width, in_dim)), dtype=dtype)
        self.U = Parameter(f"{prefix}/U", np.zeros((4 * width, width)), dtype=dtype)
        self.b = Parameter(f"{prefix}/b", np.zeros(4 * width), dtype=dtype)

    @property
    def params(self):
        return [self.W, self.U, self.b]

    def _block(self, p, k):
        H = self.width
        return p.data[k * H : (k + 1) * H]

    W_i = property(lambda self: self._block(self.W, 0))
    W_f = property(lambda self: self._block(self.W, 1))
    W_o = property(lambda self: self._block(self.W, 2))
    W_g = property(lambda self: self._block(self.W, 3))
    U_i = property(lambda self: self._block(self.U, 0))
    U_f = property(lambda self: self._block(self.U, 1))
    U_o = property(lambda self: self._block(self.U, 2))
    U_g = property(lambda self: self._block(self.U, 3))
    b_i = property(lambda self: self._block(self.b, 0))
    b_f = property(lambda self: self._block(self.b, 1))
    b_o = property(lambda self: self._block(self.b, 2))
    b_g = property(lambda self: self._block(self.b, 3))

    def __call__(self, x, state):
        hs, cs = ad.lstm_sequence(x, self.W, self.U, self.b, state[0], state[1])
        return hs, cs, (ad.take(hs, -1), ad.take(cs, -1))


@dataclass
class UnitResult:
    heads: List[Tensor]
    body: Tensor
    state: list
    cells: dict


def lstm_step(cell: LSTMCell, x, state):
    """One LSTM step on ``x[B, in]``; returns ``(h', (h', c'))``."""
    x = ad.as_tensor(x)
    h, c = state
    if x.ndim != 2 or x.shape[1] != cell.W.shape[1]:
        raise ShapeError(f"lstm_step: input {x.shape} does not match cell input dim {cell.W.shape[1]}")
    _, _, (h2, c2) = cell(ad.reshape(x, (1,) + x.shape), (h, c))
    return h2, (h2, c2)


class StackedUnit:
    """Materialized unit: parameters plus the dataflow of its layout."""

    def __init__(self, spec: UnitSpec, dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        layout = unit_layout(spec)
        self.layout = layout
        self.skip = layout.skip
        prefix = spec.factor_id
        self.layers = []
        self.pre, self.core, self.post, self.heads = [], [], [], []
        index = 0
        for group, planned in (
            (self.pre, layout.pre),
            (self.core, layout.core),
            (self.post, layout.post),
        ):
            for p in planned:
                layer = self._make(f"{prefix}/{index}.{p.spec.kind.lower()}", p)
                group.append(layer)
                self.layers.append(layer)
                index += 1
        for k, p in enumerate(layout.heads):
            layer = self._make(f"{prefix}/head{k}.{p.spec.kind.lower()}", p)
            self.heads.append(layer)
            self.layers.append(layer)

    def _make(self, name, p: PlannedLayer):
        kind, width = p.spec.kind, p.spec.width
        if kind in (FC, SOFTMAX):
            return FCLayer(name, p.in_dim, width, p.activation, self.dtype)
        if kind == RNN:
            return RNNLayer(name, p.in_dim, width, self.dtype)
        if kind == LSTM:
            return LSTMCell(name, p.in_dim, width, self.dtype)
        raise ShapeError(f"unknown layer kind {kind}")

    @property
    def factor_id(self):
        return self.spec.factor_id

    def parameters(self) -> List[Parameter]:
        return [p for layer in self.layers for p in layer.params]

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def init_params(self, seed) -> None:
        """Weights ~ U(-0.08, 0.08); biases 0 except LSTM forget gate biases = 1."""
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            for p in layer.params:
                if p.name.endswith("/b"):
                    p.data[...] = 0.0
                else:
                    p.data[...] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=p.shape)
            if isinstance(layer, LSTMCell):
                H = layer.width
                layer.b.data[H : 2 * H] = FORGET_BIAS

    def recurrent_layers(self):
        return [(i, layer) for i, layer in enumerate(self.layers) if isinstance(layer, (LSTMCell, RNNLayer))]

    def zero_state(self, batch: int) -> list:
        state = []
        for _, layer in self.recurrent_layers():
            h = Tensor(np.zeros((batch, layer.width), dtype=self.dtype))
            c = Tensor(np.zeros((batch, layer.width), dtype=self.dtype)) if isinstance(layer, LSTMCell) else None
            state.append((h, c))
        return state

    def run(self, xs, state: Optional[list] = None) -> UnitResult:
        """Run over ``xs[T, B, input_dim]`` starting from ``state`` (zeros if None)."""
        xs = ad.as_tensor(xs)
        if xs.dtype != self.dtype:
            xs = Tensor(xs.data, dtype=self.dtype)
        if xs.ndim != 3 or xs.shape[2] != self.spec.input_dim:
            raise ShapeError(
                f"{self.factor_id}: expected input [T, B, {self.spec.input_dim}], got {tuple(xs.shape)}"
            )
        if state is None:
            state = self.zero_state(xs.shape[1])
        x = xs
        for layer in self.pre:
            x = layer(x)
        raw = x
        outs = []
        new_state = []
        cells = {}
        rec_iter = iter(state)
        for i, layer in enumerate(self.core):
            if i == 0:
                inp = raw
            elif self.skip:
                inp = ad.concat([raw, outs[-1]], axis=-1)
            else:
                inp = outs[-1]
            if isinstance(layer, FCLayer):
                outs.append(layer(inp))
                continue
            hs, cs, last = layer(inp, next(rec_iter))
            if cs is not None:
                cells[self.layers.index(layer)] = cs.data
            new_state.append(last)
            outs.append(hs)
        if not outs:
            body = raw
        elif self.skip and len(outs) > 1:
            body = ad.concat(outs, axis=-1)
        else:
            body = outs[-1]
        for layer in self.post:
            body = layer(body)
        heads = [layer(body) for layer in self.heads]
        return UnitResult(heads, body, new_state, cells)

    @property
    def outputs_are_heads(self) -> bool:
        return bool(self.heads)


def unit_step(u: StackedUnit, x, state=None):
    """One step on ``x[B, input_dim]``; returns ``(outputs, state')``.

    Outputs are the head outputs ``[B, k]``, or the body output for units
    without heads.
    """
    x = ad.as_tensor(x)
    res = u.run(ad.reshape(x, (1,) + x.shape), state)
    outs = res.heads if res.heads else [res.body]
    return [ad.take(o, 0) for o in outs], res.state


def forward_sequence(u: StackedUnit, xs) -> List[Tensor]:
    """Outputs over ``xs[T, B, input_dim]`` (or ``[T, input_dim]``) from the zero state."""
    xs = ad.as_tensor(xs)
    if xs.ndim == 2:
        xs = ad.reshape(xs, (xs.shape[0], 1, xs.shape[1]))
    if xs.shape[0] < 1:
        raise ShapeError("forward_sequence needs T >= 1")
    res = u.run(xs)
    return res.heads if res.heads else [res.body]
