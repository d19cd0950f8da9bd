"""S-RNN mixtures: compile spatio-temporal graphs into shared recurrent units and train them jointly."""

from .compiler import ArchGraph, compile_arch, count_parameters, export_dot, parse_arch_spec
from .errors import (
    ArchSpecError,
    CheckpointError,
    CompileError,
    DataError,
    GraphError,
    InputError,
    ShapeError,
    SRNNError,
    SwapError,
)
from .graph import StGraph, derive_factor_graph
from .io import load_checkpoint, load_dataset, load_graph_spec, save_checkpoint
from .kernels import BACKEND
from .runtime import SequenceBatch, SRNNModel, forecast, joint_loss, swap_unit, trace_cells
from .tasks import SynthMotionConfig, angle_error, f1_macro, maneuver_metrics, synth_motion
from .trainer import Dataset, NoiseSchedule, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ArchGraph",
    "ArchSpecError",
    "BACKEND",
    "CheckpointError",
    "CompileError",
    "DataError",
    "Dataset",
    "GraphError",
    "InputError",
    "NoiseSchedule",
    "SequenceBatch",
    "ShapeError",
    "SRNNError",
    "SRNNModel",
    "StGraph",
    "SwapError",
    "SynthMotionConfig",
    "TrainConfig",
    "angle_error",
    "compile_arch",
    "count_parameters",
    "derive_factor_graph",
    "evaluate",
    "export_dot",
    "f1_macro",
    "forecast",
    "joint_loss",
    "load_checkpoint",
    "load_dataset",
    "load_graph_spec",
    "maneuver_metrics",
    "parse_arch_spec",
    "save_checkpoint",
    "swap_unit",
    "synth_motion",
    "train",
    "trace_cells",
]
