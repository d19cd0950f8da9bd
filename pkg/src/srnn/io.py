"""File formats: graph spec JSON, binary checkpoints, CSV sequence datasets."""

from __future__ import annotations

import csv
import io as _io
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .compiler import ArchGraph, count_parameters
from .errors import CheckpointError, DataError, GraphError, InputError, SwapError
from .graph import EDGE_KINDS, SPATIAL, Edge, PartitionKey, StGraph
from .runtime import SequenceBatch, SRNNModel, derive_edge_features
from .trainer import Dataset

# -- graph spec ----------------------------------------------------------------

_TOP_KEYS = {"name", "nodes", "spatial_edges", "temporal_edges", "partitions", "edge_partitions", "multitask", "skip_connections"}
_PARTITION_KEYS = {"feature_dim", "label_dims", "arch"}
_EDGE_PARTITION_KEYS = {"feature_dim", "arch", "derivation_rule"}


@dataclass(frozen=True)
class GraphSpec:
    graph: StGraph
    specs: Mapping[str, str]
    multitask: bool = False
    skip_connections: bool = True
    name: str = ""


def _reject_unknown(obj, allowed, where):
    if not isinstance(obj, dict):
        raise GraphError(f"{where}: expected an object")
    extra = sorted(set(obj) - allowed)
    if extra:
        raise GraphError(f"{where}: unknown key(s) {', '.join(map(repr, extra))}")


def _pairs(items, where):
    if not isinstance(items, list):
        raise GraphError(f"{where}: expected a list")
    out = []
    for i, item in enumerate(items):
        _reject_unknown(item, {"a", "b"}, f"{where}[{i}]")
        if "a" not in item or "b" not in item:
            raise GraphError(f"{where}[{i}]: needs 'a' and 'b'")
        out.append((str(item["a"]), str(item["b"])))
    return out


def parse_graph_spec(text: str) -> GraphSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"graph spec parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    _reject_unknown(doc, _TOP_KEYS, "graph spec")
    nodes_raw = doc.get("nodes", [])
    if not isinstance(nodes_raw, list) or not nodes_raw:
        raise GraphError("graph has no nodes")
    nodes = []
    for i, n in enumerate(nodes_raw):
        _reject_unknown(n, {"id", "partition"}, f"nodes[{i}]")
        if "id" not in n or "partition" not in n:
            raise GraphError(f"nodes[{i}]: needs 'id' and 'partition'")
        nodes.append((str(n["id"]), str(n["partition"])))
    partitions = doc.get("partitions", {})
    if not isinstance(partitions, dict):
        raise GraphError("partitions: expected an object")
    feature_dims, label_dims, specs = {}, {}, {}
    for label, entry in partitions.items():
        _reject_unknown(entry, _PARTITION_KEYS, f"partitions.{label}")
        feature_dims[label] = int(entry.get("feature_dim", 0))
        if entry.get("label_dims"):
            label_dims[label] = [int(k) for k in entry["label_dims"]]
        if "arch" in entry:
            specs[f"node:{label}"] = str(entry["arch"])
    for v, p in nodes:
        if p not in feature_dims:
            raise GraphError(f"node {v!r} uses undeclared partition {p!r}")
    edge_parts = doc.get("edge_partitions", {})
    if not isinstance(edge_parts, dict):
        raise GraphError("edge_partitions: expected an object")
    edge_dims, rules = {}, {}
    for fid, entry in edge_parts.items():
        _reject_unknown(entry, _EDGE_PARTITION_KEYS, f"edge_partitions.{fid}")
        try:
            key = PartitionKey.parse(fid)
        except InputError as exc:
            raise GraphError(str(exc)) from None
        fid = key.factor_id
        if "feature_dim" in entry:
            edge_dims[fid] = int(entry["feature_dim"])
        if "derivation_rule" in entry:
            rules[fid] = str(entry["derivation_rule"])
        if "arch" in entry:
            specs[fid] = str(entry["arch"])
    g = StGraph.build(
        nodes,
        _pairs(doc.get("spatial_edges", []), "spatial_edges"),
        _pairs(doc.get("temporal_edges", []), "temporal_edges"),
        feature_dims,
        label_dims,
        edge_dims,
        rules,
    )
    return GraphSpec(g, specs, bool(doc.get("multitask", False)), bool(doc.get("skip_connections", True)), str(doc.get("name", "")))


def load_graph_spec(path) -> GraphSpec:
    """Parse and validate a graph spec file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read graph spec {path}: {exc.strerror}") from None
    return parse_graph_spec(text)


def graph_spec_json(g: StGraph, specs: Optional[Mapping[str, str]] = None, multitask: bool = False, name: str = "") -> str:
    """Inverse of :func:`parse_graph_spec` (deterministic output)."""
    specs = dict(specs or {})
    doc = {
        "nodes": [{"id": v, "partition": p} for v, p in g.nodes],
        "spatial_edges": [{"a": e.a, "b": e.b} for e in g.spatial_edges],
        "temporal_edges": [{"a": e.a, "b": e.b} for e in g.temporal_edges],
        "partitions": {},
        "edge_partitions": {},
    }
    if name:
        doc["name"] = name
    if multitask:
        doc["multitask"] = True
    for p in g.partitions:
        entry = {"feature_dim": g.node_feature_dims[p]}
        if g.label_dims.get(p):
            entry["label_dims"] = list(g.label_dims[p])
        if f"node:{p}" in specs:
            entry["arch"] = specs[f"node:{p}"]
        doc["partitions"][p] = entry
    for fid in sorted(g.edge_feature_dims):
        entry = {"feature_dim": g.edge_feature_dims[fid], "derivation_rule": g.edge_rules[fid]}
        if fid in specs:
            entry["arch"] = specs[fid]
        doc["edge_partitions"][fid] = entry
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def arch_json(a: ArchGraph) -> str:
    """Deterministic JSON description of a compiled architecture."""

    def unit(u):
        return {
            "arch": u.arch,
            "input_dim": u.input_dim,
            "output_dims": list(u.output_dims),
            "skip_connections": u.skip_connections,
        }

    doc = {
        "edge_units": {fid: unit(u) for fid, u in sorted(a.edge_units.items())},
        "node_units": {fid: unit(u) for fid, u in sorted(a.node_units.items())},
        "wiring": [list(p) for p in a.wiring],
        "multitask": a.multitask,
        "parameter_count": count_parameters(a),
    }
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


# -- checkpoints ---------------------------------------------------------------

MAGIC = b"SRNN1"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}


def checkpoint_bytes(records: Mapping[str, np.ndarray]) -> bytes:
    """Serialize named arrays; records are written in name order."""
    buf = bytearray(MAGIC)
    buf += struct.pack("<HI", VERSION, len(records))
    for name in sorted(records):
        arr = np.asarray(records[name])
        code = _DTYPE_CODES.get(arr.dtype.newbyteorder("=") if arr.dtype.byteorder == ">" else arr.dtype)
        if code is None:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError(f"{name}: name or rank too large")
        buf += struct.pack("<H", len(raw)) + raw
        buf += struct.pack("<BB", code, arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    return bytes(buf)


def parse_checkpoint(data: bytes) -> Dict[str, np.ndarray]:
    """Decode checkpoint bytes after verifying magic and CRC."""
    if len(data) < len(MAGIC) + 10:
        raise CheckpointError("checkpoint truncated")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic: not an SRNN1 checkpoint")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointError("CRC mismatch: checkpoint corrupt or truncated")
    version, count = struct.unpack_from("<HI", data, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = len(MAGIC) + 6
    end = len(data) - 4
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2 : pos + 2 + n].decode("utf-8")
            pos += 2 + n
            code, rank = struct.unpack_from("<BB", data, pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            if code not in _DTYPES:
                raise CheckpointError(f"{name}: unknown dtype code {code}")
            dt = _DTYPES[code]
            size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            if pos + size > end:
                raise CheckpointError("checkpoint truncated")
            out[name] = np.frombuffer(data, dtype=dt, count=size // dt.itemsize, offset=pos).reshape(dims).astype(dt.newbyteorder("="))
            pos += size
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if pos != end:
        raise CheckpointError("trailing bytes after the last record")
    return out


def read_checkpoint(path) -> Dict[str, np.ndarray]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return parse_checkpoint(data)


def write_checkpoint(records: Mapping[str, np.ndarray], path) -> None:
    Path(path).write_bytes(checkpoint_bytes(records))


def model_records(model: SRNNModel) -> Dict[str, np.ndarray]:
    return {p.name: p.data for p in model.parameters()}


def save_checkpoint(model: SRNNModel, path) -> None:
    write_checkpoint(model_records(model), path)


def apply_records(model: SRNNModel, records: Mapping[str, np.ndarray]) -> SRNNModel:
    """Copy records into ``model``; every name and shape must match."""
    params = model.named_parameters()
    diffs = [f"missing record {n!r}" for n in sorted(set(params) - set(records))]
    diffs += [f"unexpected record {n!r}" for n in sorted(set(records) - set(params))]
    for n in sorted(set(params) & set(records)):
        if params[n].shape != records[n].shape:
            diffs.append(f"{n}: expected shape {params[n].shape}, file has {records[n].shape}")
    if diffs:
        raise CheckpointError("checkpoint does not match architecture: " + "; ".join(diffs))
    for n, p in params.items():
        p.data[...] = records[n]
    return model


def load_checkpoint(path, arch: ArchGraph, aggregate: str = "sum") -> SRNNModel:
    """Model for ``arch`` with parameters read from ``path``; dtype follows the file."""
    records = read_checkpoint(path)
    dtypes = {r.dtype for r in records.values()}
    dtype = dtypes.pop() if len(dtypes) == 1 else np.dtype(np.float64)
    return apply_records(SRNNModel(arch, seed=0, dtype=dtype, aggregate=aggregate), records)


def swap_records(target: Mapping[str, np.ndarray], donor: Mapping[str, np.ndarray], factor_id: str) -> Dict[str, np.ndarray]:
    """Checkpoint-level unit swap: donor records under ``factor_id/`` replace the target's."""
    prefix = factor_id + "/"
    mine = {n: a for n, a in target.items() if n.startswith(prefix)}
    theirs = {n: a for n, a in donor.items() if n.startswith(prefix)}
    if not mine:
        raise SwapError(f"target has no unit {factor_id!r}")
    if not theirs:
        raise SwapError(f"donor has no unit {factor_id!r}")
    diffs = [f"{n}: target only" for n in sorted(set(mine) - set(theirs))]
    diffs += [f"{n}: donor only" for n in sorted(set(theirs) - set(mine))]
    for n in sorted(set(mine) & set(theirs)):
        if mine[n].shape != theirs[n].shape or mine[n].dtype != theirs[n].dtype:
            diffs.append(f"{n}: target {mine[n].dtype}{list(mine[n].shape)} vs donor {theirs[n].dtype}{list(theirs[n].shape)}")
    if diffs:
        raise SwapError(f"incompatible unit {factor_id!r}: " + "; ".join(diffs))
    out = {n: a.copy() for n, a in target.items()}
    for n, a in theirs.items():
        out[n] = a.copy()
    return out


# -- CSV tables ----------------------------------------------------------------


def format_float(x: float) -> str:
    return repr(float(x))


def write_table(path, header: Sequence[str], rows) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_table(path) -> Tuple[List[str], np.ndarray]:
    """Header and a float matrix ``[rows, columns]``; every cell must be numeric."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    reader = csv.reader(_io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"{path}: empty file, expected a header row") from None
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: {len(row)} cells for {len(header)} columns")
        try:
            rows.append([float(c) for c in row])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric cell") from None
    return header, np.array(rows, dtype=np.float64).reshape(len(rows), len(header))


# -- datasets ------------------------------------------------------------------

SPLITS = ("train", "val", "test")


@dataclass
class NormStats:
    """Per-column mean and std for each node stream (and passthrough edge stream)."""

    nodes: Dict[str, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    edges: Dict[Edge, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def normalize_node(self, v, x):
        m, s = self.nodes[v]
        return (x - m) / s

    def denormalize_node(self, v, x):
        m, s = self.nodes[v]
        return x * s + m

    def normalize_edge(self, e, x):
        m, s = self.edges[e]
        return (x - m) / s

    def to_json(self) -> str:
        doc = {
            "nodes": {v: {"mean": m.tolist(), "std": s.tolist()} for v, (m, s) in sorted(self.nodes.items())},
            "edges": [
                {"kind": e.kind, "a": e.a, "b": e.b, "mean": m.tolist(), "std": s.tolist()}
                for e, (m, s) in sorted(self.edges.items())
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "NormStats":
        doc = json.loads(text)
        nodes = {v: (np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float)) for v, d in doc["nodes"].items()}
        edges = {
            Edge(d["kind"], d["a"], d["b"]): (np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))
            for d in doc["edges"]
        }
        return cls(nodes, edges)


def _column_stats(arrays: Sequence[np.ndarray], dim: int):
    if not arrays:
        return np.zeros(dim), np.ones(dim)
    flat = np.concatenate([a.reshape(-1, dim) for a in arrays], axis=0)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std[~(std > 1e-12)] = 1.0
    return mean, std


def compute_stats(graph: StGraph, seqs: Sequence[SequenceBatch]) -> NormStats:
    stats = NormStats()
    for v in graph.node_ids:
        stats.nodes[v] = _column_stats([b.node_features[v] for b in seqs], graph.feature_dim(v))
    for e in graph.edges:
        fid = graph.partition_key(e).factor_id
        if graph.edge_rules[fid] == "custom-passthrough":
            stats.edges[e] = _column_stats([b.edge_features[e] for b in seqs if e in b.edge_features], graph.edge_feature_dims[fid])
    return stats


def normalize_batch(graph: StGraph, stats: NormStats, batch: SequenceBatch) -> SequenceBatch:
    """Normalize node streams, rebuild derivable edges, and scale matching regression targets.

    A regression target whose width equals its node's feature width is
    normalized with that node's statistics (next-frame targets stay in the
    feature space); other targets are left untouched.
    """
    nodes = {v: stats.normalize_node(v, x) for v, x in batch.node_features.items()}
    passthrough = {e: stats.normalize_edge(e, x) for e, x in batch.edge_features.items() if e in stats.edges}
    edges = derive_edge_features(graph, nodes, passthrough)
    targets = {}
    for v, ys in batch.targets.items():
        d = graph.feature_dim(v)
        targets[v] = [
            stats.normalize_node(v, y) if y.ndim == 3 and np.issubdtype(y.dtype, np.floating) and y.shape[2] == d else y
            for y in ys
        ]
    return SequenceBatch(nodes, edges, targets)


def _edge_from_entry(entry, where) -> Edge:
    spec = entry.get("edge")
    if not isinstance(spec, dict) or set(spec) != {"kind", "a", "b"} or spec["kind"] not in EDGE_KINDS:
        raise DataError(f"{where}: 'edge' must be an object with kind, a, b")
    return Edge(spec["kind"], str(spec["a"]), str(spec["b"]))


def _canonical_edge(graph: StGraph, e: Edge, where) -> Edge:
    if e in graph.edges:
        return e
    if e.kind == SPATIAL:
        flipped = Edge(SPATIAL, e.b, e.a)
        if flipped in graph.edges:
            return flipped
    raise DataError(f"{where}: edge {tuple(e)} is not in the graph")


def read_manifest(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or set(doc) - {"graph", "streams"} or not isinstance(doc.get("streams"), list):
        raise DataError("manifest must be an object with a 'streams' list (and optional 'graph')")
    return doc


def manifest_graph_path(path) -> Optional[Path]:
    doc = read_manifest(path)
    if "graph" not in doc:
        return None
    return (Path(path).parent / doc["graph"]).resolve()


def load_dataset(path, graph: StGraph, normalize: bool = True, stats: Optional[NormStats] = None) -> Tuple[Dataset, Optional[NormStats]]:
    """Read every stream named in a manifest.

    With ``normalize`` the statistics are computed on the train split
    unless given; the returned dataset is normalized and the statistics are
    returned alongside for persistence and de-normalization.
    """
    doc = read_manifest(path)
    base = Path(path).parent
    seqs: Dict[Tuple[str, str], dict] = {}
    for i, entry in enumerate(doc["streams"]):
        where = f"manifest stream {i}"
        if not isinstance(entry, dict):
            raise DataError(f"{where}: expected an object")
        extra = set(entry) - {"sequence", "split", "kind", "node", "edge", "head", "path"}
        if extra:
            raise DataError(f"{where}: unknown key(s) {sorted(extra)}")
        split = entry.get("split", "train")
        if split not in SPLITS:
            raise DataError(f"{where}: unknown split {split!r}")
        kind = entry.get("kind")
        if "sequence" not in entry or "path" not in entry:
            raise DataError(f"{where}: needs 'sequence' and 'path'")
        seq = seqs.setdefault((split, str(entry["sequence"])), {"nodes": {}, "edges": {}, "targets": {}})
        header, table = read_table(base / entry["path"])
        if kind == "node":
            v = str(entry.get("node"))
            if v not in graph.node_ids:
                raise DataError(f"{where}: unknown node {v!r}")
            d = graph.feature_dim(v)
            if table.shape[1] != d:
                raise DataError(f"stream {entry['path']} (node {v}): expected {d} columns, got {table.shape[1]}")
            seq["nodes"][v] = table
        elif kind == "edge":
            e = _canonical_edge(graph, _edge_from_entry(entry, where), where)
            d = graph.edge_feature_dims[graph.partition_key(e).factor_id]
            if table.shape[1] != d:
                raise DataError(f"stream {entry['path']} (edge {tuple(e)}): expected {d} columns, got {table.shape[1]}")
            seq["edges"][e] = table
        elif kind == "target":
            v = str(entry.get("node"))
            dims = graph.label_dims.get(graph.label_of(v), ()) if v in graph.node_ids else ()
            head = int(entry.get("head", 0))
            if not dims:
                raise DataError(f"{where}: node {v!r} carries no labels")
            if header == ["class"]:
                y = table[:, 0].astype(np.int64)
            else:
                width = dims[head % len(dims)]
                if table.shape[1] != width:
                    raise DataError(f"stream {entry['path']} (target {v}): expected {width} columns, got {table.shape[1]}")
                y = table
            seq["targets"].setdefault(v, {})[head] = y
        else:
            raise DataError(f"{where}: kind must be node, edge or target")
    splits = {s: [] for s in SPLITS}
    for (split, name), seq in sorted(seqs.items()):
        missing = [v for v in graph.node_ids if v not in seq["nodes"]]
        if missing:
            raise DataError(f"sequence {name!r}: missing node streams {missing}")
        targets = {v: [heads[k] for k in sorted(heads)] for v, heads in seq["targets"].items()}
        edges = derive_edge_features(graph, {v: x[:, None] for v, x in seq["nodes"].items()}, {e: x[:, None] for e, x in seq["edges"].items()})
        for e, x in seq["edges"].items():
            edges[e] = x[:, None]
        batch = SequenceBatch(seq["nodes"], edges, targets)
        batch.check(graph)
        splits[split].append(batch)
    if normalize:
        if stats is None:
            stats = compute_stats(graph, splits["train"])
        for s in SPLITS:
            splits[s] = [normalize_batch(graph, stats, b) for b in splits[s]]
    else:
        stats = None
    return Dataset(splits["train"], splits["val"], splits["test"], graph=graph), stats


def export_dataset(dataset: Dataset, graph: StGraph, directory, graph_file: Optional[str] = None) -> Path:
    """Write each sequence as per-stream CSV files plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    streams = []
    for split in SPLITS:
        for n, batch in enumerate(dataset.split(split)):
            if batch.B != 1:
                raise DataError("export_dataset expects one sequence per batch")
            name = f"{split}{n:03d}"
            for v in graph.node_ids:
                fn = f"{name}_node_{v}.csv"
                x = batch.node_features[v][:, 0]
                write_table(directory / fn, [f"f{k}" for k in range(x.shape[1])], x.tolist())
                streams.append({"sequence": name, "split": split, "kind": "node", "node": v, "path": fn})
            for e in graph.edges:
                if graph.edge_rules[graph.partition_key(e).factor_id] != "custom-passthrough":
                    continue
                fn = f"{name}_edge_{e.kind}_{e.a}_{e.b}.csv"
                x = batch.edge_features[e][:, 0]
                write_table(directory / fn, [f"f{k}" for k in range(x.shape[1])], x.tolist())
                streams.append({"sequence": name, "split": split, "kind": "edge", "edge": {"kind": e.kind, "a": e.a, "b": e.b}, "path": fn})
            for v, ys in sorted(batch.targets.items()):
                for k, y in enumerate(ys):
                    fn = f"{name}_target_{v}_{k}.csv"
                    if y.ndim == 2:
                        write_table(directory / fn, ["class"], [[int(c)] for c in y[:, 0]])
                    else:
                        write_table(directory / fn, [f"y{j}" for j in range(y.shape[2])], y[:, 0].tolist())
                    streams.append({"sequence": name, "split": split, "kind": "target", "node": v, "head": k, "path": fn})
    manifest = {"streams": streams}
    if graph_file:
        manifest["graph"] = graph_file
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def stats_path_for(manifest) -> Path:
    p = Path(manifest)
    return p.with_name(p.stem + ".stats.json")
