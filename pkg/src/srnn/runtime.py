"""Execute a compiled S-RNN: per-node forward passes, losses, forecasting.

In the forward pass for node ``v`` every edge unit wired to ``v``'s node
factor consumes the sum of the features of ``v``'s incident edges in that
partition; the node unit consumes ``[x_v ; edge unit outputs]`` with the
edge outputs in factor-id order.
"""

from __future__ import annotations

import copy
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .compiler import SOFTMAX, ArchGraph
from .errors import DataError, InputError, ShapeError, SwapError
from .graph import TEMPORAL, Edge, StGraph, derive_factor_graph, node_factor_id
from .layers import LSTMCell, StackedUnit

TASK_MODES = ("detection", "anticipation", "regression", "multitask")
SEED_FRAMES = 50
HORIZON = 100


def _as_3d(a, what):
    a = np.asarray(a)
    if a.ndim == 2:
        return a[:, None, :]
    if a.ndim != 3:
        raise ShapeError(f"{what}: expected [T, d] or [T, B, d], got shape {a.shape}")
    return a


def _targets_3d(a):
    a = np.asarray(a)
    if np.issubdtype(a.dtype, np.integer):
        return a[:, None] if a.ndim == 1 else a
    return _as_3d(a, "target")


@dataclass
class SequenceBatch:
    """Time-major features and targets for ``B`` sequences of equal length ``T``.

    Node and edge features are ``[T, B, d]`` arrays.  Targets map a node to
    one array per label head: integer class indices ``[T, B]`` or regression
    vectors ``[T, B, k]``.
    """

    node_features: Dict[str, np.ndarray]
    edge_features: Dict[Edge, np.ndarray] = field(default_factory=dict)
    targets: Dict[str, List[np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        self.node_features = {v: _as_3d(x, f"node {v}") for v, x in self.node_features.items()}
        self.edge_features = {Edge(*e): _as_3d(x, f"edge {e}") for e, x in self.edge_features.items()}
        self.targets = {v: [_targets_3d(y) for y in ys] for v, ys in self.targets.items()}
        shapes = {x.shape[:2] for x in self.node_features.values()}
        shapes |= {x.shape[:2] for x in self.edge_features.values()}
        shapes |= {y.shape[:2] for ys in self.targets.values() for y in ys}
        if len(shapes) > 1:
            raise ShapeError(f"sequence batch mixes (T, B) shapes {sorted(shapes)}")

    @property
    def T(self) -> int:
        return next(iter(self.node_features.values())).shape[0]

    @property
    def B(self) -> int:
        return next(iter(self.node_features.values())).shape[1]

    def slice_time(self, start, stop) -> "SequenceBatch":
        return SequenceBatch(
            {v: x[start:stop] for v, x in self.node_features.items()},
            {e: x[start:stop] for e, x in self.edge_features.items()},
            {v: [y[start:stop] for y in ys] for v, ys in self.targets.items()},
        )

    def check(self, graph: StGraph) -> None:
        for v in graph.node_ids:
            if v not in self.node_features:
                raise DataError(f"missing features for node {v!r}")
            d = graph.feature_dim(v)
            if self.node_features[v].shape[2] != d:
                raise DataError(f"node {v!r}: expected {d} feature columns, got {self.node_features[v].shape[2]}")
        for e, x in self.edge_features.items():
            d = graph.edge_feature_dims[graph.partition_key(e).factor_id]
            if x.shape[2] != d:
                raise DataError(f"edge {tuple(e)}: expected {d} feature columns, got {x.shape[2]}")


def concat_batches(batches: Sequence[SequenceBatch]) -> SequenceBatch:
    """Stack equal-length batches along the batch axis."""
    first = batches[0]
    return SequenceBatch(
        {v: np.concatenate([b.node_features[v] for b in batches], axis=1) for v in first.node_features},
        {e: np.concatenate([b.edge_features[e] for b in batches], axis=1) for e in first.edge_features},
        {
            v: [np.concatenate([b.targets[v][k] for b in batches], axis=1) for k in range(len(ys))]
            for v, ys in first.targets.items()
        },
    )


def derive_edge_value(rule: str, e: Edge, x_a, x_b):
    """Edge feature from endpoint features (``x_a`` is the previous frame for temporal edges)."""
    if rule == "concat-endpoints":
        return np.concatenate([x_a, x_b], axis=-1)
    if rule == "difference":
        return x_b - x_a
    raise DataError(f"edge {tuple(e)}: rule {rule!r} cannot be derived from node features")


def derive_edge_features(graph: StGraph, node_features: Mapping[str, np.ndarray], existing=None) -> Dict[Edge, np.ndarray]:
    """Build ``[T, B, d_e]`` edge features by each partition's derivation rule.

    Temporal edges ``(u, v)`` pair ``u`` at ``t-1`` with ``v`` at ``t``; at
    ``t = 0`` the previous frame is taken to be frame 0.  Custom-passthrough
    partitions are copied from ``existing``.
    """
    existing = existing or {}
    out = {}
    for e in graph.edges:
        rule = graph.edge_rules[graph.partition_key(e).factor_id]
        if rule == "custom-passthrough":
            if e not in existing:
                raise DataError(f"edge {tuple(e)} uses custom-passthrough features but none were provided")
            out[e] = existing[e]
            continue
        xa, xb = node_features[e.a], node_features[e.b]
        if e.kind == TEMPORAL:
            xa = np.concatenate([xa[:1], xa[:-1]], axis=0)
        out[e] = derive_edge_value(rule, e, xa, xb)
    return out


@dataclass
class CellTrace:
    unit: str
    layer: int
    cell: int
    node: str
    activations: np.ndarray


def unit_seed(seed: int, factor_id: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), zlib.crc32(factor_id.encode("utf-8"))])


class SRNNModel:
    """Materialized parameters for every unit of an :class:`ArchGraph`.

    ``aggregate`` selects how incident edge features are pooled: ``"sum"``
    (default) or ``"mean"``.
    """

    def __init__(self, arch: ArchGraph, seed: int = 0, dtype=np.float64, aggregate: str = "sum"):
        if arch.graph is None:
            raise InputError("architecture carries no st-graph binding")
        if aggregate not in ("sum", "mean"):
            raise InputError(f"unknown aggregate {aggregate!r}")
        self.arch = arch
        self.graph = arch.graph
        self.aggregate = aggregate
        self.dtype = np.dtype(dtype)
        self.units: Dict[str, StackedUnit] = {}
        for fid in sorted(arch.units):
            unit = StackedUnit(arch.units[fid], dtype=dtype)
            unit.init_params(unit_seed(seed, fid))
            self.units[fid] = unit
        self.calls = Counter()
        fg = derive_factor_graph(self.graph)
        self._members = {ep.factor_id: ep.members for ep in fg.edge_factors}

    # -- parameters ------------------------------------------------------------

    def parameters(self) -> List[Parameter]:
        return sorted((p for u in self.units.values() for p in u.parameters()), key=lambda p: p.name)

    def named_parameters(self) -> Dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def node_unit(self, v: str) -> StackedUnit:
        return self.units[node_factor_id(self.graph.label_of(v))]

    # -- structured inputs -----------------------------------------------------

    def _wired(self, v: str) -> List[str]:
        fid = node_factor_id(self.graph.label_of(v))
        return self.arch.wired_edges(fid)

    def _check_wired(self, v, factor_id):
        if factor_id not in self._wired(v):
            raise InputError(f"edge partition {factor_id!r} is not wired to the node factor of {v!r}")

    def selector(self, v: str, factor_id: str) -> np.ndarray:
        """Binary vector over the partition's member edges; 1 where the edge touches ``v``."""
        self._check_wired(v, factor_id)
        return np.array([1.0 if e.touches(v) else 0.0 for e in self._members[factor_id]])

    def _edge_sum(self, v, factor_id, edge_features, T, B) -> np.ndarray:
        d = self.graph.edge_feature_dims[factor_id]
        acc = np.zeros((T, B, d), dtype=self.dtype)
        n = 0
        for e in self._members[factor_id]:
            if e.touches(v):
                if e not in edge_features:
                    raise DataError(f"missing features for edge {tuple(e)}")
                acc = acc + edge_features[e]
                n += 1
        if self.aggregate == "mean" and n:
            acc = acc / n
        return acc

    def edge_input(self, v: str, factor_id: str, batch: SequenceBatch) -> Tensor:
        """``s^T F`` for node ``v``: summed features of its incident edges in the partition."""
        self._check_wired(v, factor_id)
        return Tensor(self._edge_sum(v, factor_id, batch.edge_features, batch.T, batch.B), dtype=self.dtype)

    # -- forward ---------------------------------------------------------------

    def _run_node(self, v, node_x, edge_features, states=None, trace=None):
        T, B = node_x.shape[:2]
        fid = node_factor_id(self.graph.label_of(v))
        states = states or {}
        new_states = {}
        inputs = [Tensor(node_x, dtype=self.dtype)]
        for efid in self.arch.wired_edges(fid):
            xe = Tensor(self._edge_sum(v, efid, edge_features, T, B), dtype=self.dtype)
            self.calls[efid] += 1
            res = self.units[efid].run(xe, states.get(efid))
            new_states[efid] = res.state
            if trace is not None:
                trace(efid, v, res)
            inputs.append(res.body)
        self.calls[fid] += 1
        x = ad.concat(inputs, axis=-1) if len(inputs) > 1 else inputs[0]
        res = self.units[fid].run(x, states.get(fid))
        new_states[fid] = res.state
        if trace is not None:
            trace(fid, v, res)
        return res.heads, new_states

    def forward_node(self, v: str, batch: SequenceBatch) -> List[Tensor]:
        """Head outputs ``[T, B, k]`` for node ``v`` over the whole batch."""
        if v not in batch.node_features:
            raise DataError(f"missing features for node {v!r}")
        heads, _ = self._run_node(v, batch.node_features[v], batch.edge_features)
        return heads

    def forward(self, batch: SequenceBatch) -> Dict[str, List[Tensor]]:
        return {v: self.forward_node(v, batch) for v in self.graph.node_ids}

    def labeled_nodes(self) -> List[str]:
        return [v for v in self.graph.node_ids if self.graph.label_dims.get(self.graph.label_of(v))]

    # -- stepping --------------------------------------------------------------

    def init_state(self) -> dict:
        """Zero recurrent state for every (node, unit) instance."""
        return {}

    def step(self, frames: Mapping[str, np.ndarray], edge_features: Mapping[Edge, np.ndarray], state: dict):
        """Advance every node one timestep.

        ``frames`` holds ``[B, d_v]`` node features and ``edge_features``
        ``[B, d_e]`` edge features.  Returns ``({node: [head [B, k]]}, state')``.
        """
        edges = {e: np.asarray(x)[None] for e, x in edge_features.items()}
        outputs = {}
        new_state = {}
        for v in self.graph.node_ids:
            heads, st = self._run_node(v, np.asarray(frames[v])[None], edges, state.get(v))
            outputs[v] = [h.data[0] for h in heads]
            new_state[v] = st
        return outputs, new_state


# -- losses --------------------------------------------------------------------


def _head_loss(head: Tensor, target, kind):
    if kind == SOFTMAX:
        return ad.cross_entropy_loss(head, np.asarray(target))
    return ad.euclidean_loss(head, Tensor(target, dtype=head.dtype))


@dataclass
class LossParts:
    """Joint loss plus the figures reported in training logs.

    Regression heads contribute ``sse`` (squared error without the ``1/2``)
    over ``n_reg`` output elements; softmax heads contribute ``ce`` over
    ``n_ce`` predictions.  ``sq_err`` holds the squared error of all
    regression heads per ``(t, b)`` (None without regression heads).
    """

    total: Tensor
    sse: float = 0.0
    n_reg: int = 0
    ce: float = 0.0
    n_ce: int = 0
    sq_err: object = None

    @property
    def reported(self) -> float:
        """Mean squared error per regression output plus mean cross-entropy per prediction."""
        out = 0.0
        if self.n_reg:
            out += self.sse / self.n_reg
        if self.n_ce:
            out += self.ce / self.n_ce
        return out


def loss_parts(model: SRNNModel, batch: SequenceBatch, mode: str) -> LossParts:
    if mode not in TASK_MODES:
        raise InputError(f"unknown task mode {mode!r}")
    if (mode == "multitask") != model.arch.multitask:
        raise InputError(f"task mode {mode!r} does not match the compiled heads (multitask={model.arch.multitask})")
    terms = []
    parts = LossParts(None)

    def add(head, target, kind):
        term = _head_loss(head, target, kind)
        terms.append(term)
        if kind == SOFTMAX:
            parts.ce += float(term.data)
            parts.n_ce += int(np.prod(head.shape[:-1]))
            return
        err = np.sum((head.data - target) ** 2, axis=-1)
        parts.sse += float(np.sum(err))
        parts.n_reg += head.data.size
        parts.sq_err = err if parts.sq_err is None else parts.sq_err + err

    for v in model.labeled_nodes():
        if v not in batch.targets:
            raise DataError(f"missing targets for labeled node {v!r}")
        ys = batch.targets[v]
        n = len(model.graph.label_dims[model.graph.label_of(v)])
        if len(ys) != n:
            raise DataError(f"node {v!r}: expected {n} target streams, got {len(ys)}")
        heads = model.forward_node(v, batch)
        kinds = [layer.spec.kind for layer in model.node_unit(v).layout.heads]
        for k in range(n):
            if mode in ("detection", "regression"):
                add(heads[k], ys[k], kinds[k])
            elif mode == "anticipation":
                add(ad.take(heads[k], slice(0, -1)), ys[k][1:], kinds[k])
            else:
                add(heads[k], ys[k], kinds[k])
                add(ad.take(heads[n + k], slice(0, -1)), ys[k][1:], kinds[n + k])
    parts.total = ad.sum_list(terms) if terms else Tensor(np.array(0.0))
    return parts


def joint_loss(model: SRNNModel, batch: SequenceBatch, mode: str) -> Tensor:
    """Summed loss over labeled nodes, timesteps and sequences.

    ``detection``/``regression`` pair each output with the target at the
    same step; ``anticipation`` pairs the output at ``t`` with the target at
    ``t + 1``; ``multitask`` adds both using the first and second half of
    the heads.
    """
    return loss_parts(model, batch, mode).total


# -- forecasting ---------------------------------------------------------------


def _check_forecastable(model: SRNNModel):
    for v in model.graph.node_ids:
        unit = model.node_unit(v)
        d = model.graph.feature_dim(v)
        if not unit.layout.heads or unit.layout.heads[0].spec.kind == SOFTMAX or unit.spec.output_dims[0] != d:
            raise ShapeError(
                f"node {v!r}: forecasting needs a regression head of width {d}, "
                f"unit has output dims {list(unit.spec.output_dims)}"
            )


def _step_edges(graph: StGraph, prev: Mapping[str, np.ndarray], cur: Mapping[str, np.ndarray], held):
    out = {}
    for e in graph.edges:
        rule = graph.edge_rules[graph.partition_key(e).factor_id]
        if rule == "custom-passthrough":
            out[e] = held[e]
            continue
        xa = prev[e.a] if e.kind == TEMPORAL else cur[e.a]
        out[e] = derive_edge_value(rule, e, xa, cur[e.b])
    return out


def forecast(model: SRNNModel, seed: SequenceBatch, horizon: int = HORIZON, return_state: bool = False):
    """Consume the seed frames, then predict ``horizon`` frames closed-loop.

    Returns ``{node: [horizon, B, d]}`` (and the final state when
    ``return_state``).  After the seed, predicted frames are the only input;
    custom-passthrough edge features are held at their last seed value.
    """
    _check_forecastable(model)
    if horizon < 0:
        raise InputError("horizon must be non-negative")
    graph = model.graph
    S = seed.T
    edges_all = derive_edge_features(graph, seed.node_features, seed.edge_features)
    for e, x in seed.edge_features.items():
        edges_all[e] = x
    state = model.init_state()
    outs = None
    for t in range(S):
        frames = {v: seed.node_features[v][t] for v in graph.node_ids}
        outs, state = model.step(frames, {e: x[t] for e, x in edges_all.items()}, state)
    preds = {v: [] for v in graph.node_ids}
    if horizon > 0:
        if outs is None:
            raise InputError("forecasting needs at least one seed frame")
        held = {e: x[S - 1] for e, x in edges_all.items()}
        prev = {v: seed.node_features[v][S - 1] for v in graph.node_ids}
        frame = {v: outs[v][0] for v in graph.node_ids}
        for v in graph.node_ids:
            preds[v].append(frame[v])
        for _ in range(horizon - 1):
            outs, state = model.step(frame, _step_edges(graph, prev, frame, held), state)
            prev = frame
            frame = {v: outs[v][0] for v in graph.node_ids}
            for v in graph.node_ids:
                preds[v].append(frame[v])
    B = seed.B
    result = {
        v: np.stack(p) if p else np.zeros((0, B, graph.feature_dim(v)), dtype=model.dtype) for v, p in preds.items()
    }
    return (result, state) if return_state else result


# -- unit surgery and inspection ---------------------------------------------


def _spec_diff(a, b) -> List[str]:
    diffs = []
    for name in ("layers", "heads", "skip_connections", "input_dim", "output_dims"):
        x, y = getattr(a, name), getattr(b, name)
        if x != y:
            if name in ("layers", "heads"):
                x = [layer.render() for layer in x]
                y = [layer.render() for layer in y]
            diffs.append(f"{name}: target {x} vs donor {y}")
    return diffs


def swap_unit(target: SRNNModel, donor: SRNNModel, factor_id: str) -> SRNNModel:
    """Copy of ``target`` whose unit ``factor_id`` carries the donor's parameters."""
    for name, m in (("target", target), ("donor", donor)):
        if factor_id not in m.units:
            raise SwapError(f"{name} model has no unit {factor_id!r}")
    diffs = _spec_diff(target.units[factor_id].spec, donor.units[factor_id].spec)
    if diffs:
        raise SwapError(f"incompatible unit {factor_id!r}: " + "; ".join(diffs))
    out = copy.deepcopy(target)
    for mine, theirs in zip(out.units[factor_id].parameters(), donor.units[factor_id].parameters()):
        mine.data[...] = theirs.data
    return out


def trace_cells(
    model: SRNNModel,
    batch: SequenceBatch,
    unit_id: str,
    layer: int,
    cells: Sequence[int],
    batch_index: int = 0,
) -> List[CellTrace]:
    """Memory-cell values ``c_t`` of an LSTM layer, one trace per (node pass, cell)."""
    if unit_id not in model.units:
        raise InputError(f"unknown unit {unit_id!r}")
    unit = model.units[unit_id]
    if not 0 <= layer < len(unit.layers):
        raise InputError(f"{unit_id}: layer index {layer} out of range (unit has {len(unit.layers)} layers)")
    cell_layer = unit.layers[layer]
    if not isinstance(cell_layer, LSTMCell):
        raise InputError(f"{unit_id}: layer {layer} is not an LSTM layer")
    for c in cells:
        if not 0 <= c < cell_layer.width:
            raise InputError(f"{unit_id}: cell index {c} out of range (layer width {cell_layer.width})")
    if not 0 <= batch_index < batch.B:
        raise InputError(f"batch index {batch_index} out of range")
    traces = []

    def hook(fid, v, res):
        if fid == unit_id:
            cs = res.cells[layer]
            for c in cells:
                traces.append(CellTrace(unit_id, layer, c, v, cs[:, batch_index, c].copy()))

    for v in model.graph.node_ids:
        model._run_node(v, batch.node_features[v], batch.edge_features, trace=hook)
    return traces
