import copy

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

import oracles
from conftest import CAD_SPECS, hoi_arch, hoi_graph, motion_model, random_batch
from srnn import autodiff as ad
from srnn.autodiff import CE_EPS, Tape, Tensor
from srnn.compiler import compile_arch
from srnn.errors import DataError, InputError, ShapeError, SwapError
from srnn.graph import Edge, StGraph, derive_factor_graph
from srnn.runtime import (
    HORIZON,
    SEED_FRAMES,
    SequenceBatch,
    SRNNModel,
    concat_batches,
    derive_edge_features,
    forecast,
    joint_loss,
    loss_parts,
    swap_unit,
    trace_cells,
)
from srnn.tasks import SynthMotionConfig
from strategies import raw_graphs

HO = "spatial:human~object"
OO = "spatial:object~object"
HH_T = "temporal:human~human"
OO_T = "temporal:object~object"


def hoi_model(seed=0, **kw):
    return SRNNModel(hoi_arch(**kw), seed=seed)


def zero_params(model):
    for p in model.parameters():
        p.data[...] = 0.0


def test_selector_vectors_hoi():
    m = hoi_model()
    assert m.selector("v", HO).tolist() == [1.0, 1.0]
    assert m.selector("u", HO).tolist() == [1.0, 0.0]
    assert m.selector("w", HO).tolist() == [0.0, 1.0]


def test_edge_input_sums_incident_edges(rng):
    m = hoi_model()
    b = random_batch(m.graph, 3, 2, rng)
    vu, vw = b.edge_features[Edge("spatial", "v", "u")], b.edge_features[Edge("spatial", "v", "w")]
    assert np.array_equal(m.edge_input("v", HO, b).data, np.zeros_like(vu) + vu + vw)
    assert np.array_equal(m.edge_input("u", HO, b).data, vu)
    with pytest.raises(InputError):
        m.edge_input("v", OO, b)


def test_edge_input_zero_without_incident_edges(rng):
    g = hoi_graph().with_nodes([("x", "object")], [], [("x", "x")])
    m = SRNNModel(hoi_arch(g))
    b = random_batch(g, 2, 1, rng)
    out = m.edge_input("x", OO, b)
    assert out.shape == (2, 1, 6)
    assert not out.data.any()


def test_mean_aggregate(rng):
    m = SRNNModel(hoi_arch(), aggregate="mean")
    b = random_batch(m.graph, 2, 1, rng)
    vu, vw = b.edge_features[Edge("spatial", "v", "u")], b.edge_features[Edge("spatial", "v", "w")]
    np.testing.assert_allclose(m.edge_input("v", HO, b).data, (vu + vw) / 2, rtol=0, atol=1e-15)
    with pytest.raises(InputError):
        SRNNModel(hoi_arch(), aggregate="max")


@st.composite
def graphs_with_small_partitions(draw):
    nodes, spatial, temporal = draw(raw_graphs(max_nodes=6, labels="AB"))
    dims = {p: d for p, d in (("A", 2), ("B", 3)) if any(q == p for _, q in nodes)}
    g = StGraph.build(nodes, spatial, temporal, dims, {})
    assume(all(len(ep.members) <= 6 for ep in derive_factor_graph(g).edge_factors))
    return g


@settings(max_examples=100)
@given(graphs_with_small_partitions(), st.integers(0, 2**31))
def test_edge_input_equals_selector_inner_product(g, seed):
    rng = np.random.default_rng(seed)
    arch = compile_arch(derive_factor_graph(g), g, defaults={"edge": "FC(2)", "node": "FC(2)"})
    m = SRNNModel(arch)
    b = random_batch(g, 2, 1, rng)
    for fid, members in m._members.items():
        for v in g.node_ids:
            if fid not in m.arch.wired_edges(f"node:{g.label_of(v)}"):
                continue
            s, want = oracles.selector_times_features(members, b.edge_features, v)
            assert m.selector(v, fid).tolist() == s
            assert np.array_equal(m.edge_input(v, fid, b).data, want)


def test_unit_invocations_per_node(rng):
    m = hoi_model()
    b = random_batch(m.graph, 2, 1, rng)
    m.forward_node("v", b)
    assert dict(m.calls) == {HO: 1, HH_T: 1, "node:human": 1}
    m.calls.clear()
    m.forward_node("w", b)
    assert dict(m.calls) == {HO: 1, OO: 1, OO_T: 1, "node:object": 1}


def test_isolated_node_consumes_own_features(rng):
    g = StGraph.build([("a", "A"), ("b", "B")], [], [("a", "a")], {"A": 2, "B": 3}, {"A": (2,), "B": (2,)})
    m = SRNNModel(compile_arch(derive_factor_graph(g), g, defaults={"edge": "LSTM(3)", "node": "LSTM(4)-FC(·)"}))
    assert m.units["node:B"].spec.input_dim == 3
    b = random_batch(g, 4, 2, rng, regression=True)
    out = m.forward_node("b", b)
    assert [o.shape for o in out] == [(4, 2, 2)]
    assert dict(m.calls) == {"node:B": 1}


def test_forward_deterministic(rng):
    b = random_batch(hoi_graph(), 5, 2, rng)
    a = hoi_model(seed=3).forward(b)
    c = hoi_model(seed=3).forward(b)
    for v in a:
        for x, y in zip(a[v], c[v]):
            assert np.array_equal(x.data, y.data)
    d = hoi_model(seed=4).forward(b)
    assert not np.array_equal(a["v"][0].data, d["v"][0].data)


def test_step_matches_sequence_forward(rng):
    m = hoi_model(seed=1)
    b = random_batch(m.graph, 4, 2, rng)
    full = m.forward(b)
    state = m.init_state()
    for t in range(4):
        outs, state = m.step({v: x[t] for v, x in b.node_features.items()}, {e: x[t] for e, x in b.edge_features.items()}, state)
        for v in outs:
            np.testing.assert_allclose(outs[v][0], full[v][0].data[t], rtol=0, atol=1e-14)


def test_batch_columns_are_independent(rng):
    m = hoi_model(seed=2)
    a, b = random_batch(m.graph, 3, 1, rng), random_batch(m.graph, 3, 1, rng)
    both = m.forward(concat_batches([a, b]))
    alone = m.forward(b)
    np.testing.assert_allclose(both["u"][0].data[:, 1:], alone["u"][0].data, rtol=0, atol=1e-14)


def test_perfect_regression_loss_is_zero(rng):
    cfg = SynthMotionConfig(parts=2, T=6, sequences=1)
    data, m = motion_model(cfg)
    zero_params(m)
    b = data.train[0]
    b = SequenceBatch(b.node_features, b.edge_features, {v: [np.zeros_like(y[0])] for v, y in b.targets.items()})
    parts = loss_parts(m, b, "regression")
    assert parts.total.item() == 0.0 and parts.reported == 0.0
    assert parts.n_reg == 2 * 5 * 3


def test_regression_loss_is_half_squared_error(rng):
    cfg = SynthMotionConfig(parts=2, T=6, sequences=1)
    data, m = motion_model(cfg, seed=5)
    b = data.train[0]
    outs = m.forward(b)
    sse = sum(np.sum((outs[v][0].data - b.targets[v][0]) ** 2) for v in outs)
    parts = loss_parts(m, b, "regression")
    assert parts.total.item() == pytest.approx(sse / 2, rel=1e-12)
    assert parts.reported == pytest.approx(sse / parts.n_reg, rel=1e-12)


def test_detection_loss_is_summed_cross_entropy(rng):
    m = hoi_model(seed=1)
    b = random_batch(m.graph, 3, 2, rng)
    outs = m.forward(b)
    want = 0.0
    for v in outs:
        p = outs[v][0].data
        y = b.targets[v][0]
        want -= np.sum(np.log(np.take_along_axis(p, y[..., None], -1) + CE_EPS))
    assert joint_loss(m, b, "detection").item() == pytest.approx(want, rel=1e-12)


def test_anticipation_t2_uses_one_pair(rng):
    m = hoi_model(seed=1)
    b = random_batch(m.graph, 2, 1, rng)
    outs = m.forward(b)
    want = -sum(np.log(outs[v][0].data[0, 0, b.targets[v][0][1, 0]] + CE_EPS) for v in outs)
    parts = loss_parts(m, b, "anticipation")
    assert parts.total.item() == pytest.approx(want, rel=1e-12)
    assert parts.n_ce == 3


def test_multitask_sums_both_halves(rng):
    m = hoi_model(seed=1, multitask=True)
    b = random_batch(m.graph, 3, 1, rng)
    outs = m.forward(b)
    want = 0.0
    for v in outs:
        y = b.targets[v][0]
        want -= np.sum(np.log(np.take_along_axis(outs[v][0].data, y[..., None], -1) + CE_EPS))
        want -= np.sum(np.log(np.take_along_axis(outs[v][1].data[:-1], y[1:, ..., None], -1) + CE_EPS))
    assert joint_loss(m, b, "multitask").item() == pytest.approx(want, rel=1e-12)


def test_loss_errors(rng):
    m = hoi_model()
    b = random_batch(m.graph, 2, 1, rng)
    with pytest.raises(InputError):
        joint_loss(m, b, "tracking")
    with pytest.raises(InputError):
        joint_loss(m, b, "multitask")
    missing = SequenceBatch(b.node_features, b.edge_features, {"v": b.targets["v"]})
    with pytest.raises(DataError, match="missing targets"):
        joint_loss(m, missing, "detection")
    no_edges = SequenceBatch(b.node_features, {}, b.targets)
    with pytest.raises(DataError, match="missing features for edge"):
        joint_loss(m, no_edges, "detection")


def _grads(model, loss_fn):
    model.zero_grad()
    with Tape():
        loss = loss_fn()
    ad.backward(loss)
    return {p.name: p.grad.copy() for p in model.parameters()}


def _node_loss(model, v, b):
    head = model.forward_node(v, b)[0]
    return ad.cross_entropy_loss(head, b.targets[v][0])


def test_shared_unit_gradients_sum_over_nodes(rng):
    m = hoi_model(seed=6)
    b = random_batch(m.graph, 3, 2, rng)
    joint = _grads(m, lambda: joint_loss(m, b, "detection"))
    per = {v: _grads(m, lambda v=v: _node_loss(m, v, b)) for v in ("v", "u", "w")}
    for name, g in joint.items():
        np.testing.assert_allclose(g, per["v"][name] + per["u"][name] + per["w"][name], rtol=1e-12, atol=1e-14)
    shared = [n for n in joint if n.startswith("node:object/")]
    assert all(per["u"][n].any() and per["w"][n].any() and not per["v"][n].any() for n in shared)
    edge = [n for n in joint if n.startswith(HO + "/")]
    assert all(per[v][n].any() for n in edge for v in ("v", "u", "w"))


def test_perturbing_shared_edge_unit_changes_every_wired_node(rng):
    m = hoi_model(seed=6)
    b = random_batch(m.graph, 3, 1, rng)
    before = {v: _node_loss(m, v, b).item() for v in ("v", "u", "w")}
    for p in m.units[HO].parameters():
        p.data += 0.05
    after = {v: _node_loss(m, v, b).item() for v in ("v", "u", "w")}
    assert all(before[v] != after[v] for v in before)


def test_joint_loss_gradcheck_small(rng):
    g = StGraph.build([("a", "A"), ("b", "B")], [("a", "b")], [("a", "a")], {"A": 2, "B": 2}, {"A": (3,), "B": (2,)})
    arch = compile_arch(derive_factor_graph(g), g, defaults={"edge": "LSTM(3)", "node": "LSTM(3)-softmax(·)"})
    m = SRNNModel(arch, seed=1)
    for p in m.parameters():
        p.data[...] = rng.uniform(-0.5, 0.5, p.shape)
    b = random_batch(g, 3, 2, rng)
    assert ad.gradcheck_params(lambda: joint_loss(m, b, "anticipation"), m.parameters()) < 1e-5


# -- forecasting ---------------------------------------------------------------


@pytest.fixture(scope="module")
def motion():
    cfg = SynthMotionConfig(parts=3, dims_per_part=2, T=80, sequences=2, coupling=0.3)
    return motion_model(cfg, seed=2)


def seed_batch(data, S):
    b = concat_batches(data.train)
    return SequenceBatch({v: x[:S] for v, x in b.node_features.items()})


def test_forecast_default_protocol_matches_oracle(motion):
    data, m = motion
    seed = seed_batch(data, SEED_FRAMES)
    preds = forecast(m, seed)
    assert set(preds) == set(m.graph.node_ids)
    assert all(p.shape == (HORIZON, 2, 2) for p in preds.values())
    want = oracles.step_forecast(m, seed.node_features, HORIZON)
    for v in preds:
        assert np.array_equal(preds[v], want[v])


def test_forecast_zero_horizon_keeps_post_seed_state(motion):
    data, m = motion
    seed = seed_batch(data, 10)
    preds, state = forecast(m, seed, 0, return_state=True)
    assert all(p.shape == (0, 2, 2) for p in preds.values())
    edges = derive_edge_features(m.graph, seed.node_features)
    s = m.init_state()
    for t in range(10):
        _, s = m.step({v: x[t] for v, x in seed.node_features.items()}, {e: x[t] for e, x in edges.items()}, s)
    for v in s:
        for fid in s[v]:
            for (h1, c1), (h2, c2) in zip(s[v][fid], state[v][fid]):
                assert np.array_equal(h1.data, h2.data)
                assert (c1 is None and c2 is None) or np.array_equal(c1.data, c2.data)


def test_forecast_first_frame_is_last_seed_output(motion):
    data, m = motion
    seed = seed_batch(data, 12)
    preds = forecast(m, seed, 3)
    outs = m.forward(SequenceBatch(seed.node_features, derive_edge_features(m.graph, seed.node_features)))
    for v in preds:
        np.testing.assert_allclose(preds[v][0], outs[v][0].data[-1], rtol=0, atol=1e-14)


def test_identity_dynamics_repeats_last_seed_frame():
    cfg = SynthMotionConfig(parts=2, dims_per_part=3, T=20, sequences=1)
    data, m = motion_model(cfg, node="FC(·)")
    for fid, unit in m.units.items():
        if fid.startswith("node:"):
            head = unit.heads[0]
            head.W.data[...] = 0.0
            head.W.data[:, :3] = np.eye(3)
            head.b.data[...] = 0.0
    seed = seed_batch(data, 7)
    preds = forecast(m, seed, 5)
    for v in preds:
        assert np.array_equal(preds[v], np.repeat(seed.node_features[v][-1:], 5, axis=0))


def test_forecast_errors(rng):
    m = hoi_model()
    b = random_batch(m.graph, 3, 1, rng)
    with pytest.raises(ShapeError, match="regression head"):
        forecast(m, b, 2)
    cfg = SynthMotionConfig(parts=2, T=10, sequences=1)
    data, mm = motion_model(cfg)
    with pytest.raises(InputError):
        forecast(mm, seed_batch(data, 3), -1)


# -- swapping and tracing ------------------------------------------------------


def test_swap_with_self_is_identity():
    m = hoi_model(seed=3)
    out = swap_unit(m, m, "node:object")
    for p, q in zip(m.parameters(), out.parameters()):
        assert p.name == q.name and np.array_equal(p.data, q.data)
    assert out is not m


def test_swap_copies_only_the_named_unit():
    a, b = hoi_model(seed=1), hoi_model(seed=2)
    out = swap_unit(a, b, "node:human")
    donor = b.named_parameters()
    target = a.named_parameters()
    for name, p in out.named_parameters().items():
        src = donor if name.startswith("node:human/") else target
        assert np.array_equal(p.data, src[name].data)
    out.units["node:human"].parameters()[0].data += 1.0
    assert not np.array_equal(out.units["node:human"].parameters()[0].data, b.units["node:human"].parameters()[0].data)


def test_swap_mismatch_reports_dimensions():
    a = hoi_model()
    wider = SRNNModel(hoi_arch(specs=dict(CAD_SPECS, **{"node:human": "LSTM(32)-softmax(·)"})))
    with pytest.raises(SwapError, match=r"LSTM\(16\).*LSTM\(32\)"):
        swap_unit(a, wider, "node:human")
    with pytest.raises(SwapError, match="no unit"):
        swap_unit(a, a, "node:robot")


def test_trace_cells_zero_model_and_length(rng):
    m = hoi_model()
    zero_params(m)
    b = SequenceBatch({v: np.zeros((7, 1, m.graph.feature_dim(v))) for v in m.graph.node_ids})
    b = SequenceBatch(b.node_features, derive_edge_features(m.graph, b.node_features))
    traces = trace_cells(m, b, "node:object", 0, [0, 5])
    assert [(t.node, t.cell) for t in traces] == [("u", 0), ("u", 5), ("w", 0), ("w", 5)]
    assert all(t.activations.shape == (7,) and not t.activations.any() for t in traces)


def test_trace_cells_is_non_intrusive(rng):
    m = hoi_model(seed=4)
    b = random_batch(m.graph, 6, 2, rng)
    before = m.forward(b)
    traces = trace_cells(m, b, HO, 0, [1, 2, 3], batch_index=1)
    after = m.forward(b)
    for v in before:
        assert np.array_equal(before[v][0].data, after[v][0].data)
    assert len(traces) == 9 and all(len(t.activations) == 6 for t in traces)
    res = m.units["node:human"].run(
        Tensor(np.concatenate([b.node_features["v"], m.units[HO].run(m.edge_input("v", HO, b)).body.data,
                               m.units[HH_T].run(m.edge_input("v", HH_T, b)).body.data], axis=-1))
    )
    human = trace_cells(m, b, "node:human", 0, [4])
    assert np.array_equal(human[0].activations, res.cells[0][:, 0, 4])


def test_trace_cells_errors(rng):
    m = SRNNModel(hoi_arch(specs={**dict.fromkeys([HO, OO, HH_T, OO_T], "FC(4)-LSTM(8)"),
                                   "node:human": "LSTM(16)-softmax(·)", "node:object": "LSTM(16)-softmax(·)"}))
    b = random_batch(m.graph, 2, 1, rng)
    with pytest.raises(InputError, match="not an LSTM"):
        trace_cells(m, b, HO, 0, [0])
    with pytest.raises(InputError, match="out of range"):
        trace_cells(m, b, HO, 5, [0])
    with pytest.raises(InputError, match="cell index"):
        trace_cells(m, b, HO, 1, [8])
    with pytest.raises(InputError, match="unknown unit"):
        trace_cells(m, b, "node:robot", 0, [0])
    with pytest.raises(InputError, match="batch index"):
        trace_cells(m, b, HO, 1, [0], batch_index=1)


def test_model_copy_is_independent():
    m = hoi_model()
    c = copy.deepcopy(m)
    c.parameters()[0].data += 1.0
    assert not np.array_equal(c.parameters()[0].data, m.parameters()[0].data)
