import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import HOI_NODES, HOI_SPATIAL, HOI_TEMPORAL, hoi_graph
from srnn.errors import GraphError, InputError
from srnn.graph import (
    SPATIAL,
    TEMPORAL,
    Edge,
    PartitionKey,
    StGraph,
    derive_factor_graph,
    incident_edges,
    partition_edges,
)
from strategies import raw_graphs


def test_hoi_partitions():
    parts = {ep.factor_id: ep.members for ep in partition_edges(hoi_graph())}
    assert {fid: len(m) for fid, m in parts.items()} == {
        "spatial:human~object": 2,
        "spatial:object~object": 1,
        "temporal:human~human": 1,
        "temporal:object~object": 2,
    }


def test_hoi_factor_graph():
    fg = derive_factor_graph(hoi_graph())
    assert fg.node_factors == ("node:human", "node:object")
    assert len(fg.edge_factors) == 4
    assert fg.factor_count == 6
    assert set(fg.neighbor_pairs) == {
        ("spatial:human~object", "node:human"),
        ("spatial:human~object", "node:object"),
        ("spatial:object~object", "node:object"),
        ("temporal:human~human", "node:human"),
        ("temporal:object~object", "node:object"),
    }


def test_single_node_graph():
    g = StGraph.build([("a", "A")])
    assert partition_edges(g) == []
    fg = derive_factor_graph(g)
    assert fg.node_factors == ("node:A",)
    assert fg.edge_factors == ()
    assert fg.neighbor_pairs == ()


def test_three_partitions_fully_connected():
    nodes = [("a", "A"), ("b", "B"), ("c", "C")]
    spatial = list(itertools.combinations("abc", 2))
    g = StGraph.build(nodes, spatial)
    got = [ep.factor_id for ep in partition_edges(g)]
    expected = sorted({oracles.edge_factor_id("spatial", x, y) for x, y in itertools.combinations("ABC", 2)})
    assert got == expected


def test_spatial_and_temporal_never_share():
    g = StGraph.build([("a", "A"), ("b", "A")], [("a", "b")], [("a", "b")])
    kinds = sorted(ep.key.kind for ep in partition_edges(g))
    assert kinds == [SPATIAL, TEMPORAL]


def test_incident_edges_human_object():
    g = hoi_graph()
    got = incident_edges(g, "v", "spatial:human~object")
    assert [e.other("v") for e in got] == ["u", "w"]
    assert incident_edges(g, "u", "temporal:human~human") == []


def test_incident_edges_star_sorted_by_leaf():
    leaves = ["l3", "l0", "l4", "l1", "l2"]
    g = StGraph.build([("c", "hub")] + [(x, "leaf") for x in leaves], [("c", x) for x in leaves])
    got = incident_edges(g, "c", PartitionKey.from_labels(SPATIAL, "leaf", "hub"))
    assert [e.other("c") for e in got] == sorted(leaves)


def test_incident_edges_errors():
    g = hoi_graph()
    with pytest.raises(InputError):
        incident_edges(g, "nobody", "spatial:human~object")
    with pytest.raises(InputError):
        incident_edges(g, "v", "spatial:human~human")
    with pytest.raises(InputError):
        incident_edges(g, "v", "not-a-key")


@pytest.mark.parametrize(
    "nodes, spatial, temporal, fragment",
    [
        ([("a", "A"), ("a", "B")], [], [], "duplicate node"),
        ([("a", "A")], [("a", "z")], [], "unknown node 'z'"),
        ([("a", "A"), ("b", "A")], [("a", "b"), ("b", "a")], [], "duplicate spatial"),
        ([("a", "A")], [], [("a", "a"), ("a", "a")], "duplicate temporal"),
        ([("a", "A")], [("a", "a")], [], "self-edge"),
    ],
)
def test_build_rejects_invalid(nodes, spatial, temporal, fragment):
    with pytest.raises(GraphError, match=fragment):
        StGraph.build(nodes, spatial, temporal)


def test_edge_rule_validation():
    nodes = [("a", "A"), ("b", "B")]
    with pytest.raises(GraphError, match="concat-endpoints"):
        StGraph.build(nodes, [("a", "b")], [], {"A": 2, "B": 2}, edge_feature_dims={"spatial:A~B": 3}, edge_rules={"spatial:A~B": "concat-endpoints"})
    with pytest.raises(GraphError, match="difference"):
        StGraph.build(nodes, [("a", "b")], [], {"A": 2, "B": 3}, edge_rules={"spatial:A~B": "difference"})
    with pytest.raises(GraphError, match="no member edges"):
        StGraph.build(nodes, [], [], {"A": 2, "B": 2}, edge_feature_dims={"spatial:A~B": 4})
    g = StGraph.build(nodes, [("a", "b")], [], {"A": 2, "B": 2}, edge_feature_dims={"spatial:A~B": 7})
    assert g.edge_rules["spatial:A~B"] == "custom-passthrough"
    assert g.edge_feature_dims["spatial:A~B"] == 7


def test_temporal_edges_keep_direction():
    g = StGraph.build([("a", "A"), ("b", "B")], [], [("b", "a")])
    assert g.temporal_edges == (Edge(TEMPORAL, "b", "a"),)
    assert g.partition_key(g.temporal_edges[0]).factor_id == "temporal:A~B"


@given(raw_graphs())
def test_partition_is_a_partition(raw):
    g = StGraph.build(*raw)
    parts = partition_edges(g)
    seen = [e for ep in parts for e in ep.members]
    assert sorted(seen) == sorted(g.edges)
    assert len(seen) == len(set(seen))
    for ep in parts:
        assert {g.partition_key(e) for e in ep.members} == {ep.key}


@given(raw_graphs())
def test_neighbor_pairs_match_bruteforce(raw):
    fg = derive_factor_graph(StGraph.build(*raw))
    assert set(fg.neighbor_pairs) == oracles.neighbor_pairs(*raw)
    assert {ep.factor_id for ep in fg.edge_factors} == oracles.edge_factor_ids(*raw)


@given(raw_graphs())
def test_factor_count_bound(raw):
    nodes, spatial, temporal = raw
    g = StGraph.build(*raw)
    labels = {p for _, p in nodes}
    combos = len(list(itertools.combinations_with_replacement(sorted(labels), 2))) * 2
    assert derive_factor_graph(g).factor_count <= len(labels) + combos


@given(raw_graphs(), st.randoms(use_true_random=False))
def test_factor_graph_deterministic_under_input_order(raw, rnd):
    nodes, spatial, temporal = raw
    a = derive_factor_graph(StGraph.build(nodes, spatial, temporal))
    nodes2, spatial2, temporal2 = list(nodes), [(b, a_) for a_, b in spatial], list(temporal)
    rnd.shuffle(nodes2)
    rnd.shuffle(spatial2)
    rnd.shuffle(temporal2)
    b = derive_factor_graph(StGraph.build(nodes2, spatial2, temporal2))
    assert a == b


def test_adding_node_keeps_factor_count():
    g = hoi_graph()
    bigger = g.with_nodes([("x", "object")], [("v", "x"), ("u", "x")], [("x", "x")])
    assert derive_factor_graph(bigger).factor_count == derive_factor_graph(g).factor_count


def test_hoi_build_normalizes_input_order():
    g1 = StGraph.build(HOI_NODES, HOI_SPATIAL, HOI_TEMPORAL)
    g2 = StGraph.build(HOI_NODES[::-1], [(b, a) for a, b in HOI_SPATIAL], HOI_TEMPORAL[::-1])
    assert g1 == g2
