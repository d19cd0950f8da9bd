"""Synthetic data, presets for the three application graphs, and metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, InputError, ShapeError
from .graph import StGraph
from .runtime import SequenceBatch, derive_edge_features
from .trainer import Dataset

# -- synthetic motion ----------------------------------------------------------


@dataclass(frozen=True)
class SynthMotionConfig:
    """Coupled sinusoids on a chain of body parts.

    Feature ``k`` of part ``i`` is ``s_ik(t) = sin(2 pi f_ik t dt + phi_ik)``
    mixed with its chain neighbours:
    ``x_i = (1 - c) s_i + c * mean_{j ~ i} s_j``.  Frequencies and phases
    default to seeded draws; ``phase_jitter`` adds a per-sequence phase
    offset drawn from ``U(-jitter, jitter)``.
    """

    parts: int = 2
    dims_per_part: int = 3
    frequencies: Optional[Tuple[Tuple[float, ...], ...]] = None
    phases: Optional[Tuple[Tuple[float, ...], ...]] = None
    coupling: float = 0.0
    T: int = 500
    sequences: int = 4
    val_sequences: int = 0
    dt: float = 0.04
    phase_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.parts < 1 or self.dims_per_part < 1 or self.T < 2 or self.sequences < 1:
            raise InputError("synth motion: parts, dims_per_part and sequences must be positive and T >= 2")
        if self.val_sequences < 0 or self.dt <= 0 or self.phase_jitter < 0:
            raise InputError("synth motion: val_sequences, dt and phase_jitter must be non-negative (dt positive)")
        if not 0.0 <= self.coupling <= 1.0:
            raise InputError("synth motion: coupling must lie in [0, 1]")
        for name in ("frequencies", "phases"):
            table = getattr(self, name)
            if table is not None and np.shape(table) != (self.parts, self.dims_per_part):
                raise InputError(f"synth motion: {name} must have shape ({self.parts}, {self.dims_per_part})")


def part_id(i: int) -> str:
    return f"p{i}"


def synth_motion_graph(cfg: SynthMotionConfig) -> StGraph:
    """Chain ``p0 - p1 - ...`` with a temporal self-edge per part; every part is its own partition."""
    n, d = cfg.parts, cfg.dims_per_part
    labels = [f"part{i}" for i in range(n)]
    return StGraph.build(
        [(part_id(i), labels[i]) for i in range(n)],
        [(part_id(i), part_id(i + 1)) for i in range(n - 1)],
        [(part_id(i), part_id(i)) for i in range(n)],
        node_feature_dims={p: d for p in labels},
        label_dims={p: (d,) for p in labels},
    )


def _motion_params(cfg: SynthMotionConfig):
    rng = np.random.default_rng(cfg.seed)
    freqs = rng.uniform(0.3, 1.0, size=(cfg.parts, cfg.dims_per_part))
    phases = rng.uniform(0.0, 2 * math.pi, size=(cfg.parts, cfg.dims_per_part))
    if cfg.frequencies is not None:
        freqs = np.array(cfg.frequencies, dtype=float)
    if cfg.phases is not None:
        phases = np.array(cfg.phases, dtype=float)
    return rng, freqs, phases


def synth_motion_frames(cfg: SynthMotionConfig) -> np.ndarray:
    """Raw frames ``[sequences + val_sequences, T, parts, dims]``."""
    rng, freqs, phases = _motion_params(cfg)
    N = cfg.sequences + cfg.val_sequences
    t = np.arange(cfg.T) * cfg.dt
    jitter = rng.uniform(-cfg.phase_jitter, cfg.phase_jitter, size=(N, cfg.parts, cfg.dims_per_part))
    s = np.sin(2 * math.pi * freqs[None, None] * t[None, :, None, None] + phases[None, None] + jitter[:, None])
    if cfg.coupling == 0.0:
        return s
    x = np.empty_like(s)
    for i in range(cfg.parts):
        nbrs = [j for j in (i - 1, i + 1) if 0 <= j < cfg.parts]
        mixed = np.mean(s[:, :, nbrs], axis=2) if nbrs else s[:, :, i]
        x[:, :, i] = (1.0 - cfg.coupling) * s[:, :, i] + cfg.coupling * mixed
    return x


def synth_motion(cfg: SynthMotionConfig) -> Dataset:
    """Next-frame regression dataset: features are frames ``0..T-2``, targets frames ``1..T-1``."""
    graph = synth_motion_graph(cfg)
    frames = synth_motion_frames(cfg)
    seqs = []
    for n in range(frames.shape[0]):
        nodes = {part_id(i): frames[n, :-1, i] for i in range(cfg.parts)}
        targets = {part_id(i): [frames[n, 1:, i]] for i in range(cfg.parts)}
        batch = SequenceBatch(nodes, {}, targets)
        edges = derive_edge_features(graph, batch.node_features)
        seqs.append(SequenceBatch(batch.node_features, edges, batch.targets))
    return Dataset(seqs[: cfg.sequences], seqs[cfg.sequences :], [], graph=graph)


def edge_ablated(dataset: Dataset) -> Dataset:
    """Same nodes and targets with every edge removed (no edge units after compilation)."""
    g = dataset.graph
    if g is None:
        raise InputError("edge_ablated needs a dataset bound to its graph")
    graph = StGraph.build(g.nodes, (), (), g.node_feature_dims, g.label_dims)

    def strip(seqs):
        return [SequenceBatch(b.node_features, {}, b.targets) for b in seqs]

    return Dataset(strip(dataset.train), strip(dataset.val), strip(dataset.test), graph=graph)


# -- application presets -------------------------------------------------------


@dataclass(frozen=True)
class TaskPreset:
    graph: StGraph
    specs: Mapping[str, str]
    mode: str
    multitask: bool = False


def human_motion_preset(dims: Optional[Mapping[str, int]] = None) -> TaskPreset:
    """Spine, arms and legs; the spine touches every limb and the limbs touch each other."""
    dims = dict(dims or {"spine": 6, "arm": 6, "leg": 6})
    nodes = [("spine", "spine"), ("left_arm", "arm"), ("right_arm", "arm"), ("left_leg", "leg"), ("right_leg", "leg")]
    spatial = [
        ("spine", "left_arm"), ("spine", "right_arm"), ("spine", "left_leg"), ("spine", "right_leg"),
        ("left_arm", "right_arm"), ("left_leg", "right_leg"), ("left_arm", "left_leg"), ("right_arm", "right_leg"),
    ]
    temporal = [(v, v) for v, _ in nodes]
    g = StGraph.build(nodes, spatial, temporal, dims, {p: (d,) for p, d in dims.items()})
    specs = {}
    for ep in sorted({g.partition_key(e).factor_id for e in g.edges}):
        specs[ep] = "FC(256)-FC(256)-LSTM(512)"
    for p in g.partitions:
        specs[f"node:{p}"] = "LSTM(512)-FC(256)-FC(100)-FC(·)"
    return TaskPreset(g, specs, "regression")


def activity_preset(n_objects: int = 2, human_dim: int = 16, object_dim: int = 8, multitask: bool = False) -> TaskPreset:
    """One human and ``n_objects`` objects; 10 sub-activities, 12 affordances."""
    objs = [f"object{i}" for i in range(n_objects)]
    nodes = [("human", "human")] + [(o, "object") for o in objs]
    spatial = [("human", o) for o in objs] + [(a, b) for i, a in enumerate(objs) for b in objs[i + 1 :]]
    temporal = [(v, v) for v, _ in nodes]
    g = StGraph.build(nodes, spatial, temporal, {"human": human_dim, "object": object_dim}, {"human": (10,), "object": (12,)})
    specs = {g.partition_key(e).factor_id: "LSTM(128)" for e in g.edges}
    specs.update({"node:human": "LSTM(256)-softmax(·)", "node:object": "LSTM(256)-softmax(·)"})
    return TaskPreset(g, specs, "multitask" if multitask else "anticipation", multitask)


MANEUVERS = ("left_lane_change", "right_lane_change", "left_turn", "right_turn", "straight")


def driving_preset(driver_dim: int = 8, inside_dim: int = 8, outside_dim: int = 8) -> TaskPreset:
    """Driver node labeled with the upcoming maneuver; inside/outside observation nodes are unlabeled."""
    g = StGraph.build(
        [("driver", "driver"), ("inside", "inside"), ("outside", "outside")],
        [("driver", "inside"), ("driver", "outside")],
        [],
        {"driver": driver_dim, "inside": inside_dim, "outside": outside_dim},
        {"driver": (len(MANEUVERS),)},
    )
    specs = {g.partition_key(e).factor_id: "LSTM(64)" for e in g.edges}
    specs["node:driver"] = "RNN(64)-softmax(5)"
    return TaskPreset(g, specs, "anticipation")


def anticipation_shift(batch: SequenceBatch) -> SequenceBatch:
    """Targets advanced one step; ``T`` shrinks by one."""
    if batch.T < 2:
        raise InputError("anticipation_shift needs T >= 2")
    return SequenceBatch(
        {v: x[:-1] for v, x in batch.node_features.items()},
        {e: x[:-1] for e, x in batch.edge_features.items()},
        {v: [y[1:] for y in ys] for v, ys in batch.targets.items()},
    )


# -- metrics -------------------------------------------------------------------


@dataclass
class MetricResult:
    name: str
    per_class: Dict[int, float] = field(default_factory=dict)
    aggregate: float = math.nan

    def csv_rows(self) -> List[Tuple[str, str, float]]:
        rows = [(self.name, str(k), v) for k, v in sorted(self.per_class.items())]
        rows.append((self.name, "all", self.aggregate))
        return rows


def metrics_csv(results: Sequence[MetricResult]) -> str:
    lines = ["metric,class,value"]
    for r in results:
        lines.extend(f"{m},{c},{v!r}" for m, c, v in r.csv_rows())
    return "\n".join(lines) + "\n"


def angle_error(pred, truth) -> float:
    """L2 norm of the difference of two exponential-map frames."""
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ShapeError(f"angle_error: shapes {pred.shape} and {truth.shape} differ")
    return float(np.linalg.norm((pred - truth).ravel()))


def angle_error_by_horizon(preds, truths) -> np.ndarray:
    """Mean over seed sequences of the per-frame angle error; inputs ``[N, H, d]``."""
    preds, truths = np.asarray(preds, dtype=float), np.asarray(truths, dtype=float)
    if preds.shape != truths.shape or preds.ndim != 3:
        raise ShapeError(f"angle_error_by_horizon: expected matching [N, H, d], got {preds.shape} and {truths.shape}")
    return np.linalg.norm(preds - truths, axis=2).mean(axis=0)


def horizon_frames(milliseconds: Sequence[float], fps: float) -> List[int]:
    """Frame index (1-based horizon step) closest to each time mark at ``fps``."""
    if fps <= 0:
        raise InputError("fps must be positive")
    return [max(1, int(round(ms * fps / 1000.0))) for ms in milliseconds]


def predict_labels(probs) -> np.ndarray:
    """Argmax over the last axis; ties go to the lowest class index."""
    return np.argmax(np.asarray(probs), axis=-1)


def f1_macro(preds, truth) -> MetricResult:
    """Per-class F1 and their unweighted mean over classes seen in either input."""
    preds, truth = np.asarray(preds).ravel(), np.asarray(truth).ravel()
    if preds.shape != truth.shape:
        raise ShapeError(f"f1_macro: {preds.size} predictions for {truth.size} labels")
    classes = sorted(set(preds.tolist()) | set(truth.tolist()))
    per_class = {}
    for k in classes:
        tp = int(np.sum((preds == k) & (truth == k)))
        fp = int(np.sum((preds == k) & (truth != k)))
        fn = int(np.sum((preds != k) & (truth == k)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        per_class[k] = 2 * p * r / (p + r) if p + r else 0.0
    agg = sum(per_class.values()) / len(per_class) if per_class else math.nan
    return MetricResult("f1_macro", per_class, agg)


class ManeuverEvent(NamedTuple):
    start: float
    label: int


def _sequence_prediction(times, labels, start, default):
    before = [i for i, t in enumerate(times) if t <= start]
    if not before:
        return default, math.nan
    last = before[-1]
    label = int(labels[last])
    if label == default:
        return default, math.nan
    first = last
    while first > 0 and int(labels[first - 1]) == label:
        first -= 1
    return label, float(times[first])


def maneuver_metrics(
    predictions: Sequence[Tuple[Sequence[float], Sequence]],
    events: Sequence[ManeuverEvent],
    default: int = len(MANEUVERS) - 1,
    threshold: float = 0.5,
) -> Dict[str, MetricResult]:
    """Precision, recall and time-to-maneuver over a set of driving sequences.

    ``predictions[i]`` is ``(timestamps, outputs)`` for sequence ``i``;
    outputs are class labels or ``[T, K]`` probabilities.  A probability
    row names a maneuver when its best non-default class exceeds
    ``threshold``.  The sequence's prediction is the label standing at the
    event start, timed from the start of its uninterrupted run.  Sequences
    whose event carries the default label have no maneuver.
    """
    if len(predictions) != len(events):
        raise DataError(f"maneuver_metrics: {len(predictions)} predictions for {len(events)} events")
    tp, fp, fn = {}, {}, {}
    lead_times = []
    for (times, outputs), ev in zip(predictions, events):
        times = np.asarray(times, dtype=float)
        out = np.asarray(outputs)
        if not isinstance(ev, ManeuverEvent) or not math.isfinite(float(ev.start)):
            raise DataError(f"malformed event {ev!r}")
        if out.shape[:1] != times.shape or np.any(np.diff(times) < 0):
            raise DataError("maneuver_metrics: outputs must align with non-decreasing timestamps")
        if out.ndim == 2:
            scores = out.copy().astype(float)
            scores[:, default] = -np.inf
            best = predict_labels(scores)
            labels = np.where(scores[np.arange(len(best)), best] > threshold, best, default)
        else:
            labels = out.astype(int)
        label, when = _sequence_prediction(times, labels, float(ev.start), default)
        truth = int(ev.label)
        if label != default and label == truth:
            tp[truth] = tp.get(truth, 0) + 1
            lead_times.append(float(ev.start) - when)
        else:
            if label != default:
                fp[label] = fp.get(label, 0) + 1
            if truth != default:
                fn[truth] = fn.get(truth, 0) + 1
    classes = sorted(set(tp) | set(fp) | set(fn))
    T, F, N = sum(tp.values()), sum(fp.values()), sum(fn.values())
    precision = MetricResult(
        "precision",
        {k: tp.get(k, 0) / (tp.get(k, 0) + fp.get(k, 0)) for k in classes if tp.get(k, 0) + fp.get(k, 0)},
        T / (T + F) if T + F else 0.0,
    )
    recall = MetricResult(
        "recall",
        {k: tp.get(k, 0) / (tp.get(k, 0) + fn.get(k, 0)) for k in classes if tp.get(k, 0) + fn.get(k, 0)},
        T / (T + N) if T + N else 0.0,
    )
    ttm = MetricResult("time_to_maneuver", {}, float(np.mean(lead_times)) if lead_times else math.nan)
    return {"precision": precision, "recall": recall, "time_to_maneuver": ttm}
