import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from srnn.compiler import compile_arch
from srnn.errors import DataError, InputError, ShapeError
from srnn.graph import Edge, derive_factor_graph
from srnn.runtime import SequenceBatch
from srnn.tasks import (
    MetricResult,
    ManeuverEvent,
    SynthMotionConfig,
    activity_preset,
    angle_error,
    angle_error_by_horizon,
    anticipation_shift,
    driving_preset,
    edge_ablated,
    f1_macro,
    horizon_frames,
    maneuver_metrics,
    metrics_csv,
    predict_labels,
    synth_motion,
    synth_motion_frames,
    synth_motion_graph,
)

# -- synthetic motion ----------------------------------------------------------


def test_synth_motion_closed_form():
    f = ((0.5, 0.25), (0.8, 0.3))
    phi = ((0.1, 1.0), (2.0, -0.5))
    cfg = SynthMotionConfig(parts=2, dims_per_part=2, frequencies=f, phases=phi, T=40, sequences=2, dt=0.04)
    frames = synth_motion_frames(cfg)
    for t in range(40):
        for i in range(2):
            for k in range(2):
                want = math.sin(2 * math.pi * f[i][k] * t * 0.04 + phi[i][k])
                assert frames[0, t, i, k] == pytest.approx(want, abs=1e-12)
                assert frames[1, t, i, k] == frames[0, t, i, k]


def test_synth_motion_coupling_mix():
    base = SynthMotionConfig(parts=3, dims_per_part=2, T=20, sequences=1, seed=5)
    s = synth_motion_frames(base)
    x = synth_motion_frames(SynthMotionConfig(parts=3, dims_per_part=2, T=20, sequences=1, seed=5, coupling=0.4))
    np.testing.assert_allclose(x[:, :, 0], 0.6 * s[:, :, 0] + 0.4 * s[:, :, 1], rtol=0, atol=1e-15)
    np.testing.assert_allclose(x[:, :, 1], 0.6 * s[:, :, 1] + 0.4 * (s[:, :, 0] + s[:, :, 2]) / 2, rtol=0, atol=1e-15)


def test_synth_motion_uncoupled_parts_are_independent():
    a = SynthMotionConfig(parts=2, dims_per_part=1, frequencies=((0.3,), (0.71,)), phases=((0.0,), (1.0,)), T=10000, sequences=1)
    b = SynthMotionConfig(parts=2, dims_per_part=1, frequencies=((0.3,), (0.93,)), phases=((0.0,), (2.0,)), T=10000, sequences=1)
    fa, fb = synth_motion_frames(a), synth_motion_frames(b)
    assert np.array_equal(fa[:, :, 0], fb[:, :, 0])
    r = np.corrcoef(fa[0, :, 0, 0], fa[0, :, 1, 0])[0, 1]
    assert abs(r) < 0.01


def test_synth_motion_dataset_layout():
    cfg = SynthMotionConfig(parts=3, dims_per_part=2, T=12, sequences=2, val_sequences=1, coupling=0.2)
    d = synth_motion(cfg)
    assert (len(d.train), len(d.val), len(d.test)) == (2, 1, 0)
    frames = synth_motion_frames(cfg)
    b = d.val[0]
    assert b.T == 11
    assert np.array_equal(b.node_features["p1"][:, 0], frames[2, :-1, 1])
    assert np.array_equal(b.targets["p1"][0][:, 0], frames[2, 1:, 1])
    e = Edge("spatial", "p0", "p1")
    assert np.array_equal(b.edge_features[e][:, 0], np.concatenate([frames[2, :-1, 0], frames[2, :-1, 1]], axis=-1))
    g = synth_motion_graph(cfg)
    assert d.graph == g and len(g.spatial_edges) == 2 and len(g.temporal_edges) == 3


def test_synth_motion_deterministic_and_validated():
    cfg = SynthMotionConfig(T=30, phase_jitter=0.5, seed=9)
    a, b = synth_motion(cfg), synth_motion(cfg)
    assert all(np.array_equal(x.node_features["p0"], y.node_features["p0"]) for x, y in zip(a.train, b.train))
    assert not np.array_equal(a.train[0].node_features["p0"], a.train[1].node_features["p0"])
    for bad in ({"parts": 0}, {"T": 1}, {"coupling": 1.5}, {"frequencies": ((1.0,),)}, {"dt": 0.0}):
        with pytest.raises(InputError):
            SynthMotionConfig(**bad)


def test_edge_ablated_removes_every_edge():
    d = synth_motion(SynthMotionConfig(T=10, sequences=2))
    a = edge_ablated(d)
    assert a.graph.edges == () and a.graph.node_ids == d.graph.node_ids
    assert all(b.edge_features == {} for b in a.train)
    arch = compile_arch(derive_factor_graph(a.graph), a.graph, defaults={"edge": "FC(8)", "node": "LSTM(4)-FC(·)"})
    assert arch.edge_units == {}


def test_presets_compile():
    for preset in (activity_preset(), activity_preset(multitask=True), driving_preset()):
        g = preset.graph
        arch = compile_arch(derive_factor_graph(g), g, preset.specs, multitask=preset.multitask)
        assert arch.multitask == preset.multitask
    assert activity_preset(multitask=True).mode == "multitask"


# -- angle error ---------------------------------------------------------------


def test_angle_error_examples():
    assert angle_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert angle_error([3.0, 4.0], [0.0, 0.0]) == 5.0
    with pytest.raises(ShapeError):
        angle_error([1.0], [1.0, 2.0])


def test_angle_error_metric_axioms_random_triples():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        a, b, c = rng.uniform(-math.pi, math.pi, (3, 6))
        ab, ba, bc, ac = angle_error(a, b), angle_error(b, a), angle_error(b, c), angle_error(a, c)
        assert ab > 0 and ab == ba
        assert angle_error(a, a) == 0.0
        assert ac <= ab + bc + 1e-12


def test_angle_error_by_horizon_means_over_sequences():
    preds = np.zeros((2, 3, 2))
    truths = np.zeros((2, 3, 2))
    truths[0, :, 0] = [3.0, 0.0, 1.0]
    truths[1, :, 1] = [1.0, 4.0, 1.0]
    assert angle_error_by_horizon(preds, truths).tolist() == [2.0, 2.0, 1.0]
    with pytest.raises(ShapeError):
        angle_error_by_horizon(preds, truths[:, :2])


def test_horizon_frames():
    assert horizon_frames([80, 160, 320, 560, 1000], 25.0) == [2, 4, 8, 14, 25]
    assert horizon_frames([10], 25.0) == [1]
    with pytest.raises(InputError):
        horizon_frames([80], 0)


# -- f1 ------------------------------------------------------------------------


def test_f1_examples():
    r = f1_macro([0, 1, 1, 1], [0, 0, 1, 1])
    assert r.per_class == {0: pytest.approx(2 / 3), 1: pytest.approx(4 / 5)}
    assert r.aggregate == pytest.approx(11 / 15, abs=1e-15)
    assert f1_macro([2, 0, 1], [2, 0, 1]).aggregate == 1.0
    assert sorted(f1_macro([0, 2], [0, 2]).per_class) == [0, 2]
    with pytest.raises(ShapeError):
        f1_macro([0], [0, 1])
    assert math.isnan(f1_macro([], []).aggregate)


def test_f1_exhaustive_short_vectors():
    for n in range(1, 5):
        for pred in itertools.product(range(3), repeat=n):
            for truth in itertools.product(range(3), repeat=n):
                per, macro = oracles.f1_confusion(pred, truth)
                r = f1_macro(pred, truth)
                assert r.per_class == per and r.aggregate == macro


def _matrices(total, cells=9):
    """Every non-negative integer vector of length ``cells`` summing to ``total``."""
    for bars in itertools.combinations(range(total + cells - 1), cells - 1):
        prev, out = -1, []
        for b in bars + (total + cells - 1,):
            out.append(b - prev - 1)
            prev = b
        yield out


def test_f1_every_confusion_matrix_up_to_eight():
    count = 0
    for n in range(1, 9):
        for flat in _matrices(n):
            cm = [flat[0:3], flat[3:6], flat[6:9]]
            truth, pred = [], []
            for t in range(3):
                for p in range(3):
                    truth += [t] * cm[t][p]
                    pred += [p] * cm[t][p]
            per, macro = oracles.f1_from_matrix(cm)
            r = f1_macro(pred, truth)
            assert r.per_class == per and r.aggregate == macro
            count += 1
    assert count == math.comb(17, 9) - 1


@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=8), st.randoms(use_true_random=False))
def test_f1_is_order_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a = f1_macro([p for p, _ in pairs], [t for _, t in pairs])
    b = f1_macro([p for p, _ in shuffled], [t for _, t in shuffled])
    assert a.per_class == b.per_class and a.aggregate == b.aggregate


def test_predict_labels_ties_go_low():
    assert predict_labels([[0.4, 0.4, 0.2], [0.1, 0.45, 0.45]]).tolist() == [0, 1]


def test_metrics_csv():
    text = metrics_csv([MetricResult("f1_macro", {0: 0.5, 1: 1.0}, 0.75)])
    assert text == "metric,class,value\nf1_macro,0,0.5\nf1_macro,1,1.0\nf1_macro,all,0.75\n"


# -- maneuvers -----------------------------------------------------------------

TIMES = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0]
STRAIGHT = 4


def test_maneuver_lead_time_three_and_a_half_seconds():
    labels = [STRAIGHT, 0, 0, 0, 0, 0, 0, 0, 0]
    m = maneuver_metrics([(TIMES, labels)], [ManeuverEvent(4.0, 0)])
    assert m["precision"].aggregate == 1.0 and m["recall"].aggregate == 1.0
    assert m["time_to_maneuver"].aggregate == pytest.approx(3.5, abs=1e-15)


def test_maneuver_one_of_two_predicted():
    hit = (TIMES, [STRAIGHT] * 5 + [2] * 4)
    miss = (TIMES, [STRAIGHT] * 9)
    m = maneuver_metrics([hit, miss], [ManeuverEvent(4.0, 2), ManeuverEvent(4.0, 1)])
    assert m["precision"].aggregate == 1.0
    assert m["recall"].aggregate == 0.5
    assert m["recall"].per_class == {1: 0.0, 2: 1.0}
    assert m["time_to_maneuver"].aggregate == pytest.approx(1.5)


def test_maneuver_predicted_at_event_start():
    seqs = [(TIMES, [STRAIGHT] * 8 + [k]) for k in (0, 1, 3)]
    m = maneuver_metrics(seqs, [ManeuverEvent(4.0, k) for k in (0, 1, 3)])
    assert m["recall"].aggregate == 1.0
    assert m["time_to_maneuver"].aggregate == 0.0


def test_maneuver_false_alarm_and_interrupted_run():
    # prediction flips 1 -> 0 -> 1; only the last uninterrupted run counts
    labels = [1, 1, STRAIGHT, 1, 1, 1, 1, 1, 1]
    m = maneuver_metrics([(TIMES, labels), (TIMES, [3] * 9)], [ManeuverEvent(4.0, 1), ManeuverEvent(4.0, STRAIGHT)])
    assert m["precision"].aggregate == 0.5
    assert m["recall"].aggregate == 1.0
    assert m["time_to_maneuver"].aggregate == pytest.approx(2.5)


def test_maneuver_probability_threshold():
    probs = np.full((9, 5), 0.0)
    probs[:, STRAIGHT] = 1.0
    probs[6:, 0] = 0.7
    probs[3:6, 0] = 0.4
    m = maneuver_metrics([(TIMES, probs)], [ManeuverEvent(4.0, 0)])
    assert m["time_to_maneuver"].aggregate == pytest.approx(1.0)
    m = maneuver_metrics([(TIMES, probs)], [ManeuverEvent(4.0, 0)], threshold=0.3)
    assert m["time_to_maneuver"].aggregate == pytest.approx(2.5)


def test_maneuver_errors():
    with pytest.raises(DataError):
        maneuver_metrics([(TIMES, [0] * 9)], [])
    with pytest.raises(DataError):
        maneuver_metrics([(TIMES, [0] * 9)], [ManeuverEvent(float("nan"), 0)])
    with pytest.raises(DataError):
        maneuver_metrics([(TIMES[::-1], [0] * 9)], [ManeuverEvent(1.0, 0)])
    with pytest.raises(DataError):
        maneuver_metrics([(TIMES, [0] * 3)], [ManeuverEvent(1.0, 0)])


# -- anticipation shift --------------------------------------------------------


def _labels(T):
    return SequenceBatch({"a": np.arange(T, dtype=float)[:, None]}, {}, {"a": [np.arange(T) * 10]})


def test_anticipation_shift():
    one = anticipation_shift(_labels(2))
    assert one.T == 1 and one.targets["a"][0][:, 0].tolist() == [10]
    two = anticipation_shift(anticipation_shift(_labels(3)))
    assert two.targets["a"][0][:, 0].tolist() == [20]
    shifted = anticipation_shift(_labels(5))
    # features at t are paired with the label of t + 1
    assert shifted.node_features["a"][:, 0, 0].tolist() == [0, 1, 2, 3]
    assert shifted.targets["a"][0][:, 0].tolist() == [10, 20, 30, 40]
    with pytest.raises(InputError):
        anticipation_shift(_labels(1))


@settings(max_examples=25)
@given(st.integers(2, 30))
def test_anticipation_shift_length(T):
    assert anticipation_shift(_labels(T)).T == T - 1
