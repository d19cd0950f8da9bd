"""Compile a factor graph into an S-RNN architecture description.

One recurrent unit per factor; edge units feed node units along the
neighbor relation.  Units here are specifications only, parameters are
materialized by :mod:`srnn.layers`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Tuple

from .errors import ArchSpecError, CompileError
from .graph import FactorGraph, StGraph, is_node_factor

FC, RNN, LSTM, SOFTMAX = "FC", "RNN", "LSTM", "SOFTMAX"
KINDS = (FC, RNN, LSTM, SOFTMAX)
RECURRENT = (RNN, LSTM)
PLACEHOLDER = None

MAX_DIM = 2**31 - 1

DEFAULT_SPECS = {
    "edge": "FC(256)-FC(256)-LSTM(512)",
    "node": "LSTM(512)-FC(256)-FC(100)-FC(·)",
}


class LayerSpec(NamedTuple):
    kind: str
    width: Optional[int]

    def render(self) -> str:
        name = "softmax" if self.kind == SOFTMAX else self.kind
        return f"{name}({'·' if self.width is None else self.width})"


_TOKEN = re.compile(r"\s*([A-Za-z]+)\s*\(\s*(-?\d+|·|\.)\s*\)\s*")


def _byte_offset(text: str, i: int) -> int:
    return len(text[:i].encode("utf-8"))


def parse_arch_spec(text: str) -> List[LayerSpec]:
    """Parse ``FC(256)-FC(256)-LSTM(512)`` style strings.

    ``·`` or ``.`` stands for a width resolved later from the label dims.
    """
    layers = []
    pos = 0
    while True:
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ArchSpecError(f"syntax error in {text!r}", _byte_offset(text, pos))
        kind = m.group(1).upper()
        if kind not in KINDS:
            raise ArchSpecError(f"unknown layer kind {m.group(1)!r}", _byte_offset(text, m.start(1)))
        raw = m.group(2)
        if raw in ("·", "."):
            width = PLACEHOLDER
        else:
            width = int(raw)
            if width <= 0:
                raise ArchSpecError(f"non-positive width {width} for {kind}", _byte_offset(text, m.start(2)))
        layers.append(LayerSpec(kind, width))
        pos = m.end()
        if pos == len(text):
            return layers
        if text[pos] != "-":
            raise ArchSpecError(f"expected '-' in {text!r}", _byte_offset(text, pos))
        pos += 1


def render_arch_spec(layers) -> str:
    return "-".join(layer.render() for layer in layers)


@dataclass(frozen=True)
class UnitSpec:
    factor_id: str
    role: str
    layers: Tuple[LayerSpec, ...]
    heads: Tuple[LayerSpec, ...]
    skip_connections: bool
    input_dim: int
    output_dims: Tuple[int, ...]

    @property
    def arch(self) -> str:
        if not self.heads:
            return render_arch_spec(self.layers)
        return render_arch_spec(self.layers + (self.heads[0]._replace(width=None),))


class PlannedLayer(NamedTuple):
    spec: LayerSpec
    in_dim: int
    activation: str


@dataclass
class UnitLayout:
    """Resolved dataflow of a unit.

    ``pre`` are the FC layers ahead of the recurrent stack, ``core`` the
    skip-connected group (the recurrent layers, or every body layer when
    there are none), ``post`` the FC layers after the recurrent stack.
    """

    input_dim: int
    pre: List[PlannedLayer] = field(default_factory=list)
    core: List[PlannedLayer] = field(default_factory=list)
    post: List[PlannedLayer] = field(default_factory=list)
    heads: List[PlannedLayer] = field(default_factory=list)
    skip: bool = True
    body_dim: int = 0

    def all_layers(self) -> List[PlannedLayer]:
        return self.pre + self.core + self.post + self.heads


def layer_params(kind: str, width: int, in_dim: int) -> int:
    if kind in (FC, SOFTMAX):
        return in_dim * width + width
    if kind == RNN:
        return width * in_dim + width * width + width
    if kind == LSTM:
        return 4 * (width * in_dim + width * width + width)
    raise CompileError(f"unknown layer kind {kind}")


def plan_unit(body: Tuple[LayerSpec, ...], heads: Tuple[LayerSpec, ...], input_dim: int, skip: bool) -> UnitLayout:
    rec = [i for i, layer in enumerate(body) if layer.kind in RECURRENT]
    if rec and rec != list(range(rec[0], rec[-1] + 1)):
        raise CompileError("recurrent layers must form one contiguous stack")
    for layer in body:
        if layer.kind == SOFTMAX:
            raise CompileError("softmax is only valid as the final (head) layer")
        if layer.width is PLACEHOLDER:
            raise CompileError("placeholder width is only valid on the final layer of a labeled node unit")
    if rec:
        pre_specs, core_specs, post_specs = body[: rec[0]], body[rec[0] : rec[-1] + 1], body[rec[-1] + 1 :]
    else:
        pre_specs, core_specs, post_specs = (), body, ()
    last = len(body) - 1

    def act(index, layer):
        if layer.kind != FC:
            return "tanh"
        return "identity" if (heads and index == last) else "tanh"

    layout = UnitLayout(input_dim=input_dim, skip=skip)
    d = input_dim
    index = 0
    for layer in pre_specs:
        layout.pre.append(PlannedLayer(layer, d, act(index, layer)))
        d = layer.width
        index += 1
    raw = d
    core_out = 0
    prev = None
    for i, layer in enumerate(core_specs):
        if i == 0:
            in_dim = raw
        else:
            in_dim = raw + prev if skip else prev
        layout.core.append(PlannedLayer(layer, in_dim, act(index, layer)))
        prev = layer.width
        core_out = core_out + layer.width if skip else layer.width
        index += 1
    d = core_out if core_specs else raw
    for layer in post_specs:
        layout.post.append(PlannedLayer(layer, d, act(index, layer)))
        d = layer.width
        index += 1
    layout.body_dim = d
    for head in heads:
        layout.heads.append(PlannedLayer(head, d, "softmax" if head.kind == SOFTMAX else "identity"))
    return layout


def unit_layout(spec: UnitSpec) -> UnitLayout:
    return plan_unit(spec.layers, spec.heads, spec.input_dim, spec.skip_connections)


def unit_parameter_count(spec: UnitSpec) -> int:
    return sum(layer_params(p.spec.kind, p.spec.width, p.in_dim) for p in unit_layout(spec).all_layers())


@dataclass(frozen=True)
class ArchGraph:
    edge_units: Mapping[str, UnitSpec]
    node_units: Mapping[str, UnitSpec]
    wiring: Tuple[Tuple[str, str], ...]
    graph: Optional[StGraph] = field(default=None, compare=False, repr=False)
    multitask: bool = False

    @property
    def units(self) -> Dict[str, UnitSpec]:
        out = dict(self.edge_units)
        out.update(self.node_units)
        return out

    def wired_edges(self, node_factor: str) -> List[str]:
        return sorted(e for e, n in self.wiring if n == node_factor)


def _check_dim(d: int, what: str) -> int:
    if d > MAX_DIM:
        raise CompileError(f"dimension overflow: {what} = {d}")
    return d


def _node_unit(fid, label, text, g: StGraph, input_dim, multitask, skip):
    layers = tuple(parse_arch_spec(text)) if text else ()
    label_dims = tuple(g.label_dims.get(label, ()))
    if multitask:
        label_dims = label_dims * 2
    if not label_dims:
        if layers and (layers[-1].width is PLACEHOLDER or layers[-1].kind == SOFTMAX):
            raise CompileError(f"{fid}: unresolvable placeholder, partition {label!r} has no label dims")
        body, heads = layers, ()
        plan_unit(body, heads, input_dim, skip)
        return UnitSpec(fid, "node", body, heads, skip, input_dim, ())
    if not layers or layers[-1].kind not in (FC, SOFTMAX):
        raise CompileError(f"{fid}: labeled node unit needs an FC or softmax head as its last layer")
    head = layers[-1]
    if head.width is not PLACEHOLDER and any(k != head.width for k in label_dims):
        raise CompileError(f"{fid}: head width {head.width} does not match label dims {list(label_dims)}")
    heads = tuple(LayerSpec(head.kind, k) for k in label_dims)
    body = layers[:-1]
    plan_unit(body, heads, input_dim, skip)
    return UnitSpec(fid, "node", body, heads, skip, input_dim, label_dims)


def compile_arch(
    fg: FactorGraph,
    g: StGraph,
    specs: Optional[Mapping[str, str]] = None,
    defaults: Optional[Mapping[str, str]] = DEFAULT_SPECS,
    multitask: bool = False,
    skip_connections: bool = True,
) -> ArchGraph:
    """Represent each factor of ``fg`` with a unit and wire them bipartitely.

    ``specs`` maps factor ids to architecture strings; factors without an
    entry fall back to ``defaults[role]``.  Node factors of unlabeled
    partitions without an explicit spec become passive units with no
    layers.
    """
    specs = dict(specs or {})
    defaults = dict(defaults or {})
    known = set(fg.node_factors) | {ep.factor_id for ep in fg.edge_factors}
    for fid in specs:
        if fid not in known:
            raise CompileError(f"spec given for unknown factor {fid!r}")

    def spec_for(fid, role):
        if fid in specs:
            return specs[fid]
        if role not in defaults:
            raise CompileError(f"missing spec for factor {fid!r}")
        return defaults[role]

    edge_units = {}
    for ep in fg.edge_factors:
        fid = ep.factor_id
        layers = tuple(parse_arch_spec(spec_for(fid, "edge")))
        for layer in layers:
            if layer.width is PLACEHOLDER or layer.kind == SOFTMAX:
                raise CompileError(f"{fid}: edge units cannot have placeholder or softmax layers")
        layout = plan_unit(layers, (), _check_dim(ep.feature_dim, fid), skip_connections)
        edge_units[fid] = UnitSpec(
            fid, "edge", layers, (), skip_connections, ep.feature_dim, (_check_dim(layout.body_dim, fid),)
        )

    wiring = tuple(sorted(fg.neighbor_pairs))
    node_units = {}
    for fid in fg.node_factors:
        label = fid[len("node:") :]
        input_dim = g.node_feature_dims[label]
        input_dim += sum(edge_units[e].output_dims[0] for e, n in wiring if n == fid)
        _check_dim(input_dim, fid)
        if fid in specs:
            text = specs[fid]
        elif g.label_dims.get(label):
            text = spec_for(fid, "node")
        else:
            text = ""
        node_units[fid] = _node_unit(fid, label, text, g, input_dim, multitask, skip_connections)

    return ArchGraph(edge_units, node_units, wiring, graph=g, multitask=multitask)


def count_parameters(a: ArchGraph) -> int:
    return sum(unit_parameter_count(u) for u in a.units.values())


def export_dot(a: ArchGraph) -> str:
    lines = ["digraph srnn {", "  rankdir=LR;"]
    for fid in sorted(a.edge_units):
        lines.append(f'  "{fid}" [shape=ellipse, label="{fid}\\n{a.edge_units[fid].arch}"];')
    for fid in sorted(a.node_units):
        lines.append(f'  "{fid}" [shape=box, label="{fid}\\n{a.node_units[fid].arch}"];')
    for e, n in sorted(a.wiring):
        lines.append(f'  "{e}" -> "{n}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


def validate(a: ArchGraph, fg: FactorGraph, g: StGraph) -> List[str]:
    """Check the compiled graph against its source; one diagnostic per violation."""
    diags = []
    neighbors = set(fg.neighbor_pairs)
    wiring = set(a.wiring)
    for e, n in sorted(wiring - neighbors):
        diags.append(f"{n}: spurious wiring from {e}")
    for e, n in sorted(neighbors - wiring):
        diags.append(f"{n}: missing wiring from {e}")
    edge_ids = {ep.factor_id for ep in fg.edge_factors}
    for fid in sorted(edge_ids - set(a.edge_units)):
        diags.append(f"{fid}: edge factor has no unit")
    for fid in sorted(set(a.edge_units) - edge_ids):
        diags.append(f"{fid}: unit has no edge factor")
    for fid in sorted(set(fg.node_factors) - set(a.node_units)):
        diags.append(f"{fid}: node factor has no unit")
    for fid in sorted(set(a.node_units) - set(fg.node_factors)):
        diags.append(f"{fid}: unit has no node factor")
    for fid, unit in sorted(a.edge_units.items()):
        if fid in edge_ids and unit.input_dim != g.edge_feature_dims[fid]:
            diags.append(f"{fid}: input_dim {unit.input_dim} != edge feature dim {g.edge_feature_dims[fid]}")
    for fid, unit in sorted(a.node_units.items()):
        if not is_node_factor(fid) or fid not in fg.node_factors:
            continue
        label = fid[len("node:") :]
        expected = g.node_feature_dims[label]
        for e, n in sorted(wiring):
            if n == fid and e in a.edge_units:
                expected += a.edge_units[e].output_dims[0]
        if unit.input_dim != expected:
            diags.append(f"{fid}: input_dim {unit.input_dim} != node feature dim + wired edge outputs = {expected}")
        label_dims = tuple(g.label_dims.get(label, ()))
        if a.multitask:
            label_dims = label_dims * 2
        if unit.output_dims != label_dims:
            diags.append(f"{fid}: output dims {list(unit.output_dims)} != label dims {list(label_dims)}")
    return diags
