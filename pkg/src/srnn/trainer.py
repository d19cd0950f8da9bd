"""Joint SGD training of every unit in an S-RNN."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .errors import DataError, InputError
from .graph import StGraph
from .runtime import LossParts, SequenceBatch, SRNNModel, concat_batches, derive_edge_features, loss_parts

DEFAULT_NOISE = ((250, 0.01), (500, 0.05), (1000, 0.1), (1300, 0.2), (2000, 0.3), (2500, 0.5), (3300, 0.7))


@dataclass(frozen=True)
class TrainConfig:
    step_size: float = 1e-3
    bptt_len: int = 100
    batch_size: int = 100
    norm_clip: float = 25.0
    dim_clip: float = 5.0
    decay_factor: float = 0.1
    plateau_window: int = 5
    max_iterations: int = 2000
    rng_seed: int = 0
    eval_every: int = 100

    def __post_init__(self):
        for name in ("step_size", "bptt_len", "batch_size", "norm_clip", "dim_clip", "plateau_window", "eval_every"):
            if not getattr(self, name) > 0:
                raise InputError(f"train config: {name} must be positive")
        if not 0.0 < self.decay_factor < 1.0:
            raise InputError("train config: decay_factor must lie in (0, 1)")
        if self.max_iterations < 0:
            raise InputError("train config: max_iterations must be non-negative")


@dataclass(frozen=True)
class NoiseSchedule:
    points: Tuple[Tuple[int, float], ...] = DEFAULT_NOISE

    def __post_init__(self):
        pts = tuple((int(i), float(s)) for i, s in self.points)
        for (a, _), (b, _) in zip(pts, pts[1:]):
            if b <= a:
                raise InputError("noise schedule thresholds must be strictly increasing")
        if any(s < 0 for _, s in pts):
            raise InputError("noise schedule stds must be non-negative")
        object.__setattr__(self, "points", pts)


def noise_std(sched: NoiseSchedule, iteration: int) -> float:
    """Std of the largest threshold ``<= iteration``; 0 before the first."""
    if iteration < 0:
        raise InputError("iteration must be non-negative")
    std = 0.0
    for threshold, s in sched.points:
        if iteration >= threshold:
            std = s
        else:
            break
    return std


def clip_gradients(grads: Sequence[np.ndarray], norm_clip: float, dim_clip: float) -> List[np.ndarray]:
    """Rescale the joint gradient to L2 norm ``<= norm_clip``, then clamp each entry."""
    total = 0.0
    for g in grads:
        flat = np.ravel(g)
        total += float(np.dot(flat, flat))
    norm = math.sqrt(total)
    factor = norm_clip / norm if norm > norm_clip else 1.0
    return [np.clip(np.asarray(g) * factor if factor != 1.0 else np.array(g), -dim_clip, dim_clip) for g in grads]


def sgd_step(
    params: Sequence[Parameter],
    grads: Optional[Sequence[np.ndarray]] = None,
    step_size: float = 1e-3,
    norm_clip: float = 25.0,
    dim_clip: float = 5.0,
) -> None:
    """``p <- p - step_size * clip(g)``; gradient accumulators are zeroed afterwards."""
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    if len(grads) != len(params):
        raise InputError("sgd_step: one gradient per parameter required")
    for p, g in zip(params, grads):
        if np.shape(g) != p.shape:
            raise InputError(f"sgd_step: gradient shape {np.shape(g)} does not match {p.name} {p.shape}")
    for p, g in zip(params, clip_gradients(grads, norm_clip, dim_clip)):
        p.data -= step_size * g
        p.zero_grad()


@dataclass
class Dataset:
    """Full-length sequences (``B == 1`` batches) per split."""

    train: List[SequenceBatch]
    val: List[SequenceBatch] = field(default_factory=list)
    test: List[SequenceBatch] = field(default_factory=list)
    graph: Optional[StGraph] = None

    def split(self, name: str) -> List[SequenceBatch]:
        if name not in ("train", "val", "test"):
            raise InputError(f"unknown split {name!r}")
        return getattr(self, name)


@dataclass
class LogRow:
    iteration: int
    train_loss: float
    val_loss: float
    lr: float
    noise_std: float
    train_l2: float = math.nan


@dataclass
class TrainLog:
    rows: List[LogRow] = field(default_factory=list)

    def train_losses(self) -> np.ndarray:
        return np.array([r.train_loss for r in self.rows])

    def to_csv(self) -> str:
        lines = ["iteration,train_loss,val_loss,lr,noise_std,train_l2"]
        for r in self.rows:
            lines.append(f"{r.iteration},{r.train_loss!r},{r.val_loss!r},{r.lr!r},{r.noise_std!r},{r.train_l2!r}")
        return "\n".join(lines) + "\n"


def sample_windows(rng: np.random.Generator, seqs: Sequence[SequenceBatch], batch_size: int, bptt_len: int) -> SequenceBatch:
    """Random minibatch of aligned windows.

    The window length is ``bptt_len``, or the shortest sampled sequence if
    that is shorter (short sequences are then used whole).
    """
    picks = rng.integers(0, len(seqs), size=batch_size)
    L = min(bptt_len, min(seqs[i].T for i in picks))
    windows = []
    for i in picks:
        start = int(rng.integers(0, seqs[i].T - L + 1))
        windows.append(seqs[i].slice_time(start, start + L))
    return concat_batches(windows)


def add_input_noise(rng: np.random.Generator, model: SRNNModel, batch: SequenceBatch, std: float) -> SequenceBatch:
    """Gaussian noise on node features; derivable edge features are rebuilt from the noisy nodes."""
    if std == 0.0:
        return batch
    noisy = {v: x + rng.normal(0.0, std, size=x.shape) for v, x in batch.node_features.items()}
    passthrough = {e: x + rng.normal(0.0, std, size=x.shape) for e, x in batch.edge_features.items()}
    edges = derive_edge_features(model.graph, noisy, passthrough)
    return SequenceBatch(noisy, edges, batch.targets)


def evaluate(model: SRNNModel, seqs: Sequence[SequenceBatch], mode: str) -> float:
    """Reported loss pooled over whole sequences, without recording gradients."""
    if not seqs:
        return math.nan
    pooled = LossParts(None)
    for b in seqs:
        p = loss_parts(model, b, mode)
        pooled.sse += p.sse
        pooled.n_reg += p.n_reg
        pooled.ce += p.ce
        pooled.n_ce += p.n_ce
    return pooled.reported


def train(
    model: SRNNModel,
    dataset: Dataset,
    config: TrainConfig = TrainConfig(),
    schedule: NoiseSchedule = NoiseSchedule(),
    mode: str = "regression",
    callback: Optional[Callable[[LogRow], None]] = None,
) -> TrainLog:
    """Minibatch SGD on the summed joint loss.

    Logged ``train_loss`` is the minibatch mean squared error per
    regression output (the ``1/2`` of the optimized loss dropped) plus the
    mean cross-entropy per class prediction; ``train_l2`` is the mean
    per-frame L2 norm of the regression error.  The step size decays when
    ``plateau_window`` consecutive evaluations bring no new best validation
    loss (training loss averaged over the evaluation interval when there is
    no validation split).
    """
    if not dataset.train:
        raise DataError("empty training set")
    for b in dataset.train:
        b.check(model.graph)
    rng = np.random.default_rng(config.rng_seed)
    params = model.parameters()
    lr = config.step_size
    log = TrainLog()
    best = math.inf
    stale = 0
    recent = []
    for it in range(config.max_iterations):
        std = noise_std(schedule, it)
        batch = sample_windows(rng, dataset.train, config.batch_size, config.bptt_len)
        batch = add_input_noise(rng, model, batch, std)
        with ad.Tape():
            parts = loss_parts(model, batch, mode)
            ad.backward(parts.total)
        sgd_step(params, step_size=lr, norm_clip=config.norm_clip, dim_clip=config.dim_clip)
        train_loss = parts.reported
        train_l2 = float(np.mean(np.sqrt(parts.sq_err))) if parts.sq_err is not None and parts.sq_err.size else math.nan
        recent.append(train_loss)
        val_loss = math.nan
        if (it + 1) % config.eval_every == 0:
            score = evaluate(model, dataset.val, mode) if dataset.val else float(np.mean(recent))
            if dataset.val:
                val_loss = score
            recent = []
            if score < best:
                best, stale = score, 0
            else:
                stale += 1
                if stale >= config.plateau_window:
                    lr *= config.decay_factor
                    stale = 0
        row = LogRow(it, train_loss, val_loss, lr, std, train_l2)
        log.rows.append(row)
        if callback is not None:
            callback(row)
    return log
