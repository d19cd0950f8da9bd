import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from srnn.compiler import compile_arch  # noqa: E402
from srnn.graph import StGraph, derive_factor_graph  # noqa: E402

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA = os.path.join(os.path.dirname(__file__), "data")

# Human v with objects u and w; every node also links to itself across time.
HOI_NODES = [("v", "human"), ("u", "object"), ("w", "object")]
HOI_SPATIAL = [("v", "u"), ("v", "w"), ("u", "w")]
HOI_TEMPORAL = [("v", "v"), ("u", "u"), ("w", "w")]

CAD_SPECS = {
    "spatial:human~object": "LSTM(8)",
    "spatial:object~object": "LSTM(8)",
    "temporal:human~human": "LSTM(8)",
    "temporal:object~object": "LSTM(8)",
    "node:human": "LSTM(16)-softmax(·)",
    "node:object": "LSTM(16)-softmax(·)",
}


def hoi_graph(human_dim=4, object_dim=3, human_classes=10, object_classes=12):
    return StGraph.build(
        HOI_NODES,
        HOI_SPATIAL,
        HOI_TEMPORAL,
        {"human": human_dim, "object": object_dim},
        {"human": (human_classes,), "object": (object_classes,)},
    )


def hoi_arch(graph=None, specs=CAD_SPECS, **kw):
    g = graph or hoi_graph()
    return compile_arch(derive_factor_graph(g), g, specs, **kw)


def data_path(name):
    return os.path.join(DATA, name)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_batch(graph, T, B, rng, regression=False):
    """Uniform node features, rule-derived edge features, random targets for labeled nodes."""
    from srnn.runtime import SequenceBatch, derive_edge_features

    nodes = {v: rng.uniform(-1, 1, (T, B, graph.feature_dim(v))) for v in graph.node_ids}
    targets = {}
    for v in graph.node_ids:
        dims = graph.label_dims.get(graph.label_of(v))
        if dims:
            if regression:
                targets[v] = [rng.uniform(-1, 1, (T, B, k)) for k in dims]
            else:
                targets[v] = [rng.integers(0, k, (T, B)) for k in dims]
    return SequenceBatch(nodes, derive_edge_features(graph, nodes), targets)


def motion_model(cfg, seed=0, edge="FC(8)", node="LSTM(16)-FC(·)"):
    """Synthetic motion dataset and a freshly initialized model over its graph."""
    from srnn.runtime import SRNNModel
    from srnn.tasks import synth_motion

    data = synth_motion(cfg)
    g = data.graph
    arch = compile_arch(derive_factor_graph(g), g, defaults={"edge": edge, "node": node})
    return data, SRNNModel(arch, seed=seed)
