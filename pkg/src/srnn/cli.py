"""``srnn`` command line: compile, train, forecast, eval, swap, trace-cells."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import io as sio
from .compiler import compile_arch, export_dot
from .errors import DataError, InputError, SRNNError
from .graph import derive_factor_graph
from .runtime import HORIZON, SEED_FRAMES, SRNNModel, forecast, trace_cells
from .tasks import ManeuverEvent, MetricResult, angle_error, f1_macro, maneuver_metrics, metrics_csv
from .trainer import NoiseSchedule, TrainConfig, train


def _seed_override() -> Optional[int]:
    raw = os.environ.get("SRNN_SEED")
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"SRNN_SEED must be an integer, got {raw!r}") from None


def _compile(gs: sio.GraphSpec):
    fg = derive_factor_graph(gs.graph)
    return compile_arch(fg, gs.graph, gs.specs, multitask=gs.multitask, skip_connections=gs.skip_connections)


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc.strerror}") from None


def cmd_compile(args) -> None:
    gs = sio.load_graph_spec(args.graph)
    arch = _compile(gs)
    _write_text(args.out, sio.arch_json(arch))
    if args.dot:
        _write_text(args.dot, export_dot(arch))


def _read_config(path):
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"config parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise InputError("config must be a JSON object")
    return doc


def cmd_train(args) -> None:
    doc = _read_config(args.config)
    names = {f.name for f in fields(TrainConfig)}
    extra = set(doc) - names - {"noise_schedule", "model_seed", "dtype", "aggregate"}
    if extra:
        raise InputError(f"unknown config key(s) {sorted(extra)}")
    cfg_kwargs = {k: v for k, v in doc.items() if k in names}
    model_seed = int(doc.get("model_seed", 0))
    seed = _seed_override()
    if seed is not None:
        cfg_kwargs["rng_seed"] = seed
        model_seed = seed
    config = TrainConfig(**cfg_kwargs)
    schedule = NoiseSchedule(tuple(tuple(p) for p in doc["noise_schedule"])) if "noise_schedule" in doc else NoiseSchedule()
    dtype = {"float64": np.float64, "float32": np.float32}.get(doc.get("dtype", "float64"))
    if dtype is None:
        raise InputError("dtype must be float64 or float32")
    gs = sio.load_graph_spec(args.graph)
    arch = _compile(gs)
    dataset, stats = sio.load_dataset(args.data, gs.graph)
    model = SRNNModel(arch, seed=model_seed, dtype=dtype, aggregate=doc.get("aggregate", "sum"))
    log = train(model, dataset, config, schedule, args.task)
    sio.save_checkpoint(model, args.out)
    _write_text(args.log, log.to_csv())
    if stats is not None:
        _write_text(sio.stats_path_for(args.data), stats.to_json())


def _load_stats(manifest, graph):
    p = sio.stats_path_for(manifest)
    if p.exists():
        return sio.NormStats.from_json(p.read_text(encoding="utf-8"))
    return None


def cmd_forecast(args) -> None:
    if args.seed_frames < 1 or args.horizon < 0:
        raise InputError("--seed-frames must be >= 1 and --horizon >= 0")
    gs = sio.load_graph_spec(args.graph)
    arch = _compile(gs)
    model = sio.load_checkpoint(args.ckpt, arch)
    stats = _load_stats(args.data, gs.graph)
    dataset, stats = sio.load_dataset(args.data, gs.graph, stats=stats)
    seqs = dataset.split(args.split)
    if not seqs:
        raise DataError(f"no sequences in split {args.split!r}")
    g = gs.graph
    header = ["sequence", "step"] + [f"{v}.{k}" for v in g.node_ids for k in range(g.feature_dim(v))]
    rows = []
    for n, seq in enumerate(seqs):
        if seq.T < args.seed_frames:
            raise DataError(f"sequence {n} has {seq.T} frames, fewer than --seed-frames {args.seed_frames}")
        preds = forecast(model, seq.slice_time(0, args.seed_frames), args.horizon)
        cols = []
        for v in g.node_ids:
            p = preds[v][:, 0]
            cols.append(stats.denormalize_node(v, p) if stats is not None else p)
        frame = np.concatenate(cols, axis=1) if cols else np.zeros((args.horizon, 0))
        for h in range(args.horizon):
            rows.append([n, h + 1] + [float(x) for x in frame[h]])
    sio.write_table(args.out, header, rows)


def _eval_angle(pred_path, truth_path) -> List[MetricResult]:
    ph, P = sio.read_table(pred_path)
    th, T = sio.read_table(truth_path)
    if ph != th or P.shape != T.shape:
        raise DataError(f"prediction and truth tables differ in columns or rows ({P.shape} vs {T.shape})")
    keys = [c for c in ("sequence", "step") if c in ph]
    feat = [i for i, c in enumerate(ph) if c not in keys]
    if "step" in ph:
        step_col = ph.index("step")
        steps = sorted(set(P[:, step_col].astype(int).tolist()))
        per_step = {}
        for s in steps:
            rows = np.nonzero(P[:, step_col].astype(int) == s)[0]
            per_step[s] = float(np.mean([angle_error(P[r, feat], T[r, feat]) for r in rows]))
        agg = float(np.mean(list(per_step.values())))
        return [MetricResult("angle_error", per_step, agg)]
    errs = [angle_error(P[r, feat], T[r, feat]) for r in range(P.shape[0])]
    return [MetricResult("angle_error", {}, float(np.mean(errs)) if errs else float("nan"))]


def _label_column(path) -> np.ndarray:
    header, table = sio.read_table(path)
    if "label" not in header:
        raise DataError(f"{path}: expected a 'label' column")
    col = table[:, header.index("label")]
    if np.any(col != np.round(col)):
        raise DataError(f"{path}: labels must be integers")
    return col.astype(np.int64)


def _eval_maneuver(pred_path, truth_path, threshold) -> List[MetricResult]:
    ph, P = sio.read_table(pred_path)
    th, T = sio.read_table(truth_path)
    for need, h, path in ((("sequence", "time"), ph, pred_path), (("sequence", "start", "label"), th, truth_path)):
        missing = [c for c in need if c not in h]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")
    seq_p, time_p = P[:, ph.index("sequence")].astype(int), P[:, ph.index("time")]
    prob_cols = [i for i, c in enumerate(ph) if c.startswith("p") and c[1:].isdigit()]
    preds, events = [], []
    for row in T:
        s = int(row[th.index("sequence")])
        idx = np.nonzero(seq_p == s)[0]
        if "label" in ph:
            out = P[idx, ph.index("label")].astype(int)
        elif prob_cols:
            out = P[np.ix_(idx, prob_cols)]
        else:
            raise DataError(f"{pred_path}: needs a 'label' column or probability columns p0..pK")
        preds.append((time_p[idx], out))
        events.append(ManeuverEvent(float(row[th.index("start")]), int(row[th.index("label")])))
    res = maneuver_metrics(preds, events, threshold=threshold)
    return [res["precision"], res["recall"], res["time_to_maneuver"]]


def cmd_eval(args) -> None:
    if args.metric == "angle-error":
        results = _eval_angle(args.pred, args.truth)
    elif args.metric == "f1":
        results = [f1_macro(_label_column(args.pred), _label_column(args.truth))]
    else:
        results = _eval_maneuver(args.pred, args.truth, args.threshold)
    _write_text(args.out, metrics_csv(results))


def cmd_swap(args) -> None:
    target = sio.read_checkpoint(args.target)
    donor = sio.read_checkpoint(args.donor)
    sio.write_checkpoint(sio.swap_records(target, donor, args.factor), args.out)


def cmd_trace_cells(args) -> None:
    graph_path = sio.manifest_graph_path(args.data)
    if graph_path is None:
        raise DataError("manifest has no 'graph' entry; trace-cells needs the graph spec")
    gs = sio.load_graph_spec(graph_path)
    model = sio.load_checkpoint(args.ckpt, _compile(gs))
    try:
        cells = [int(c) for c in args.cells.split(",") if c.strip()]
    except ValueError:
        raise InputError(f"--cells must be comma-separated integers, got {args.cells!r}") from None
    dataset, _ = sio.load_dataset(args.data, gs.graph, stats=_load_stats(args.data, gs.graph))
    seqs = dataset.split(args.split)
    if not seqs:
        raise DataError(f"no sequences in split {args.split!r}")
    if not 0 <= args.sequence < len(seqs):
        raise InputError(f"sequence index {args.sequence} out of range ({len(seqs)} sequences)")
    traces = trace_cells(model, seqs[args.sequence], args.unit, args.layer, cells)
    rows = [[tr.node, tr.cell, t, float(v)] for tr in traces for t, v in enumerate(tr.activations)]
    sio.write_table(args.out, ["node", "cell", "t", "value"], rows)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: usage: {message}", file=sys.stderr)
        sys.exit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="srnn", description="S-RNN toolkit: compile, train, forecast, evaluate")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="compile a graph spec into an architecture")
    c.add_argument("--graph", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--dot")
    c.set_defaults(func=cmd_compile)

    t = sub.add_parser("train", help="train all units jointly")
    t.add_argument("--graph", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--task", required=True, choices=["detection", "anticipation", "regression", "multitask"])
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--log", required=True)
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("forecast", help="closed-loop forecast from seed frames")
    f.add_argument("--graph", required=True)
    f.add_argument("--ckpt", required=True)
    f.add_argument("--seed-frames", type=int, default=SEED_FRAMES)
    f.add_argument("--horizon", type=int, default=HORIZON)
    f.add_argument("--data", required=True)
    f.add_argument("--split", default="test", choices=sio.SPLITS)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_forecast)

    e = sub.add_parser("eval", help="compute a metric from prediction and truth tables")
    e.add_argument("--metric", required=True, choices=["angle-error", "f1", "maneuver"])
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("swap", help="replace one unit's parameters with a donor's")
    s.add_argument("--target", required=True)
    s.add_argument("--donor", required=True)
    s.add_argument("--factor", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_swap)

    tc = sub.add_parser("trace-cells", help="record LSTM memory cells during a forward pass")
    tc.add_argument("--ckpt", required=True)
    tc.add_argument("--data", required=True)
    tc.add_argument("--unit", required=True)
    tc.add_argument("--layer", type=int, required=True)
    tc.add_argument("--cells", required=True)
    tc.add_argument("--split", default="test", choices=sio.SPLITS)
    tc.add_argument("--sequence", type=int, default=0)
    tc.add_argument("--out", required=True)
    tc.set_defaults(func=cmd_trace_cells)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except SRNNError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
