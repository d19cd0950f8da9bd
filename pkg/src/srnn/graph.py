"""Spatio-temporal graphs and their shared-factor parameterization.

Nodes carry a partition label; nodes with the same label share one node
factor.  Edges are grouped by the (sorted) label pair of their endpoints and
by kind, spatial edges never sharing a factor with temporal ones.  The
neighbor relation between edge and node factors drives compilation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from .errors import GraphError, InputError

SPATIAL = "spatial"
TEMPORAL = "temporal"
EDGE_KINDS = (SPATIAL, TEMPORAL)

DERIVATION_RULES = ("concat-endpoints", "difference", "custom-passthrough")


class Edge(NamedTuple):
    """A spatial edge (a, b) in canonical order, or a temporal edge a@t -> b@t+1."""

    kind: str
    a: str
    b: str

    def other(self, v: str) -> str:
        return self.b if self.a == v else self.a

    def touches(self, v: str) -> bool:
        return self.a == v or self.b == v


class PartitionKey(NamedTuple):
    kind: str
    label_a: str
    label_b: str

    @property
    def factor_id(self) -> str:
        return f"{self.kind}:{self.label_a}~{self.label_b}"

    @classmethod
    def from_labels(cls, kind: str, la: str, lb: str) -> "PartitionKey":
        la, lb = sorted((la, lb))
        return cls(kind, la, lb)

    @classmethod
    def parse(cls, factor_id: str) -> "PartitionKey":
        kind, sep, rest = factor_id.partition(":")
        if not sep or kind not in EDGE_KINDS or rest.count("~") != 1:
            raise InputError(f"not an edge factor id: {factor_id!r}")
        la, lb = rest.split("~")
        return cls.from_labels(kind, la, lb)


def node_factor_id(label: str) -> str:
    return f"node:{label}"


def is_node_factor(factor_id: str) -> bool:
    return factor_id.startswith("node:")


@dataclass(frozen=True)
class StGraph:
    """Immutable st-graph ``G = (V, E_S, E_T)`` with partitioned nodes.

    ``edge_feature_dims`` and ``edge_rules`` are keyed by edge factor id.
    Undeclared edge partitions default to the concatenation of endpoint
    features.
    """

    nodes: Tuple[Tuple[str, str], ...]
    spatial_edges: Tuple[Edge, ...]
    temporal_edges: Tuple[Edge, ...]
    node_feature_dims: Mapping[str, int]
    label_dims: Mapping[str, Tuple[int, ...]] = field(default_factory=dict)
    edge_feature_dims: Mapping[str, int] = field(default_factory=dict)
    edge_rules: Mapping[str, str] = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        nodes: Iterable[Tuple[str, str]],
        spatial_edges: Iterable[Tuple[str, str]] = (),
        temporal_edges: Iterable[Tuple[str, str]] = (),
        node_feature_dims: Optional[Mapping[str, int]] = None,
        label_dims: Optional[Mapping[str, Sequence[int]]] = None,
        edge_feature_dims: Optional[Mapping[str, int]] = None,
        edge_rules: Optional[Mapping[str, str]] = None,
    ) -> "StGraph":
        nodes = tuple((str(v), str(p)) for v, p in nodes)
        labels: Dict[str, str] = {}
        for v, p in nodes:
            if v in labels:
                raise GraphError(f"duplicate node id {v!r}")
            if not p or "~" in p:
                raise GraphError(f"invalid partition label {p!r} on node {v!r}")
            labels[v] = p
        partitions = sorted(set(labels.values()))
        node_feature_dims = dict(node_feature_dims or {})
        for p in partitions:
            node_feature_dims.setdefault(p, 0)
        for p, d in node_feature_dims.items():
            if p not in partitions:
                raise GraphError(f"feature dim declared for unknown partition {p!r}")
            if int(d) < 0:
                raise GraphError(f"negative feature dim for partition {p!r}")
        label_dims = {p: tuple(int(k) for k in dims) for p, dims in (label_dims or {}).items()}
        for p, dims in label_dims.items():
            if p not in partitions:
                raise GraphError(f"label dims declared for unknown partition {p!r}")
            if any(k <= 0 for k in dims):
                raise GraphError(f"non-positive label dim for partition {p!r}")

        def check(kind, pairs):
            out = []
            seen = set()
            for a, b in pairs:
                a, b = str(a), str(b)
                for end in (a, b):
                    if end not in labels:
                        raise GraphError(f"{kind} edge ({a}, {b}) references unknown node {end!r}")
                if kind == SPATIAL:
                    if a == b:
                        raise GraphError(f"spatial self-edge on {a!r}")
                    a, b = sorted((a, b), key=lambda n: (labels[n], n))
                e = Edge(kind, a, b)
                if e in seen:
                    raise GraphError(f"duplicate {kind} edge ({a}, {b})")
                seen.add(e)
                out.append(e)
            return tuple(sorted(out))

        spatial = check(SPATIAL, spatial_edges)
        temporal = check(TEMPORAL, temporal_edges)

        keys = {
            PartitionKey.from_labels(e.kind, labels[e.a], labels[e.b]).factor_id: (labels[e.a], labels[e.b])
            for e in spatial + temporal
        }
        declared = dict(edge_feature_dims or {})
        rules = dict(edge_rules or {})
        for fid in list(declared) + list(rules):
            if fid not in keys:
                raise GraphError(f"edge partition {fid!r} has no member edges")
        for fid, (la, lb) in keys.items():
            da, db = node_feature_dims[la], node_feature_dims[lb]
            dim = int(declared.get(fid, da + db))
            if dim < 0:
                raise GraphError(f"negative feature dim for edge partition {fid!r}")
            rule = rules.get(fid)
            if rule is None:
                rule = "concat-endpoints" if dim == da + db else "custom-passthrough"
            if rule not in DERIVATION_RULES:
                raise GraphError(f"unknown derivation rule {rule!r} for {fid!r}")
            if rule == "concat-endpoints" and dim != da + db:
                raise GraphError(f"{fid}: concat-endpoints needs feature_dim {da + db}, got {dim}")
            if rule == "difference" and not (da == db == dim):
                raise GraphError(f"{fid}: difference rule needs equal endpoint dims matching feature_dim")
            declared[fid] = dim
            rules[fid] = rule
        return cls(
            nodes=tuple(sorted(nodes)),
            spatial_edges=spatial,
            temporal_edges=temporal,
            node_feature_dims=node_feature_dims,
            label_dims=label_dims,
            edge_feature_dims=declared,
            edge_rules=rules,
        )

    @property
    def node_ids(self) -> List[str]:
        return [v for v, _ in self.nodes]

    @property
    def partitions(self) -> List[str]:
        return sorted({p for _, p in self.nodes})

    @property
    def edges(self) -> Tuple[Edge, ...]:
        return self.spatial_edges + self.temporal_edges

    @cached_property
    def _labels(self) -> Dict[str, str]:
        return dict(self.nodes)

    def label_of(self, v: str) -> str:
        try:
            return self._labels[v]
        except KeyError:
            raise InputError(f"unknown node id {v!r}") from None

    def feature_dim(self, v: str) -> int:
        return self.node_feature_dims[self.label_of(v)]

    def partition_key(self, e: Edge) -> PartitionKey:
        return PartitionKey.from_labels(e.kind, self.label_of(e.a), self.label_of(e.b))

    def with_nodes(self, nodes, spatial_edges=(), temporal_edges=()) -> "StGraph":
        """Copy with extra nodes and edges; declarations carry over."""
        return StGraph.build(
            list(self.nodes) + list(nodes),
            [(e.a, e.b) for e in self.spatial_edges] + list(spatial_edges),
            [(e.a, e.b) for e in self.temporal_edges] + list(temporal_edges),
            self.node_feature_dims,
            self.label_dims,
            self.edge_feature_dims,
            self.edge_rules,
        )


@dataclass(frozen=True)
class EdgePartition:
    key: PartitionKey
    members: Tuple[Edge, ...]
    feature_dim: int

    @property
    def factor_id(self) -> str:
        return self.key.factor_id


@dataclass(frozen=True)
class FactorGraph:
    node_factors: Tuple[str, ...]
    edge_factors: Tuple[EdgePartition, ...]
    neighbor_pairs: Tuple[Tuple[str, str], ...]

    @property
    def factor_count(self) -> int:
        return len(self.node_factors) + len(self.edge_factors)

    def edge_partition(self, factor_id: str) -> EdgePartition:
        for ep in self.edge_factors:
            if ep.factor_id == factor_id:
                return ep
        raise InputError(f"unknown edge partition {factor_id!r}")


def partition_edges(g: StGraph) -> List[EdgePartition]:
    groups: Dict[PartitionKey, List[Edge]] = {}
    for e in g.edges:
        groups.setdefault(g.partition_key(e), []).append(e)
    return [
        EdgePartition(key, tuple(sorted(members)), g.edge_feature_dims[key.factor_id])
        for key, members in sorted(groups.items(), key=lambda kv: kv[0].factor_id)
    ]


def derive_factor_graph(g: StGraph) -> FactorGraph:
    parts = partition_edges(g)
    pairs = set()
    for ep in parts:
        for e in ep.members:
            for end in (e.a, e.b):
                pairs.add((ep.factor_id, node_factor_id(g.label_of(end))))
    return FactorGraph(
        node_factors=tuple(node_factor_id(p) for p in g.partitions),
        edge_factors=tuple(parts),
        neighbor_pairs=tuple(sorted(pairs)),
    )


def incident_edges(g: StGraph, v: str, partition) -> List[Edge]:
    """Edges of ``partition`` touching ``v``, ordered by counterpart node id."""
    g.label_of(v)
    if isinstance(partition, EdgePartition):
        key = partition.key
    elif isinstance(partition, PartitionKey):
        key = partition
    else:
        key = PartitionKey.parse(str(partition))
    found = [e for e in g.edges if e.touches(v) and g.partition_key(e) == key]
    if not found and key.factor_id not in g.edge_feature_dims:
        raise InputError(f"unknown edge partition {key.factor_id!r}")
    return sorted(found, key=lambda e: (e.other(v), e))

