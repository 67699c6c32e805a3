"""End-to-end optimization, evaluation over the four cells, and checkpoints.

Training iterates batch sampling -> forward generation -> weighted L1 ->
backward -> gradient clipping -> Adam. With a fixed seed and single-threaded
execution every run is bit-reproducible. Checkpoints serialize named tensors
in 32-bit; resuming from the same file is bit-reproducible across loads.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from stylemix.autodiff import Graph, Tensor
from stylemix.fontnet import FontNet, FontNetConfig, stack_triplets
from stylemix.glyphs import Corpus, build_eval_sets, sample_training_batch
from stylemix.losses import l1_metric, pdar_metric, rmse_metric, weighted_l1_loss
from stylemix.nst import FeatureExtractor, LossWeights, NstNet, nst_objective

CHECKPOINT_MAGIC = b"EMD1"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or inconsistent configuration)."""


# ---------------------------------------------------------------------------
# checkpoint I/O
# ---------------------------------------------------------------------------


def save_checkpoint(path, arrays: dict) -> None:
    """Write named float arrays as 32-bit little-endian tensors."""
    path = Path(path)
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<HI", CHECKPOINT_VERSION, len(arrays))
    for name, array in arrays.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array)
        if array.ndim > 255:
            raise CheckpointError(f"tensor {name!r} rank {array.ndim} exceeds format limit")
        blob += struct.pack("<H", len(encoded)) + encoded
        blob += struct.pack("<B", array.ndim)
        for extent in array.shape:
            blob += struct.pack("<I", extent)
        blob += array.astype("<f4").tobytes()
    path.write_bytes(bytes(blob))


def load_checkpoint(path) -> dict:
    """Read a checkpoint back into float64 arrays, validating the layout."""
    path = Path(path)
    data = path.read_bytes()
    pos = 0

    def need(count: int, what: str) -> bytes:
        nonlocal pos
        if pos + count > len(data):
            raise CheckpointError(
                f"{path}: truncated while reading {what} at byte {pos} "
                f"(need {count}, have {len(data) - pos})"
            )
        chunk = data[pos:pos + count]
        pos += count
        return chunk

    if need(4, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version, count = struct.unpack("<HI", need(6, "header"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    arrays: dict = {}
    for index in range(count):
        (name_len,) = struct.unpack("<H", need(2, f"tensor {index} name length"))
        name = need(name_len, f"tensor {index} name").decode("utf-8")
        if name in arrays:
            raise CheckpointError(f"{path}: duplicate tensor name {name!r} at byte {pos}")
        (rank,) = struct.unpack("<B", need(1, f"{name!r} rank"))
        shape = struct.unpack(f"<{rank}I", need(4 * rank, f"{name!r} extents"))
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw = need(4 * size, f"{name!r} values")
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes after last tensor")
    return arrays


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment buffers plus hyperparameters."""

    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state: AdamState) -> None:
    """Bias-corrected Adam update over every parameter's populated gradient."""
    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if p.grad is None:
            raise TrainingError(f"parameter {name!r} has no gradient for the Adam step")
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        p.data = p.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


def clip_gradients(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for _, p in params.items():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for _, p in params.items():
            if p.grad is not None:
                p.grad *= scale
    return norm


# ---------------------------------------------------------------------------
# typeface training and evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    learning_rate: float = 2e-4
    batch_size: int = 4
    n_t: int = 20000
    r: int = 4
    base_channels: int = 16
    seed: int = 0
    clip_norm: float = 5.0
    start_step: int = 0
    zero_skips: bool = False
    eval_every: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError(f"invalid training configuration {self}")


@dataclass
class TrainResult:
    net: FontNet
    losses: list
    log_lines: list
    eval_history: list


@dataclass(frozen=True)
class SuiteMetrics:
    l1: float
    rmse: float
    pdar: float


def train(config: TrainConfig, corpus: Corpus, net: FontNet | None = None,
          adam: AdamState | None = None, eval_suites: dict | None = None,
          log_path=None) -> TrainResult:
    """Optimize the weighted L1 objective over d1 triplets.

    Deterministic for a fixed config and corpus in single-threaded execution.
    Appends "step,loss,wall_ms" lines to ``log_path`` when given; aborts with
    a diagnostic on a non-finite loss.
    """
    if net is None:
        net = FontNet.initialize(
            FontNetConfig(image_size=corpus.config.image_size,
                          base_channels=config.base_channels,
                          ref_count=config.r),
            seed=config.seed,
        )
    if net.config.ref_count != config.r:
        raise TrainingError(
            f"model expects r={net.config.ref_count} but the run is configured "
            f"with r={config.r}"
        )
    if adam is None:
        adam = AdamState(learning_rate=config.learning_rate)
    log_file = open(log_path, "a", encoding="ascii") if log_path else None
    losses: list = []
    log_lines: list = []
    eval_history: list = []
    try:
        for offset in range(config.steps):
            step = config.start_step + offset
            t0 = time.perf_counter()
            triplets = sample_training_batch(
                corpus, config.n_t, config.r, config.batch_size, config.seed, step
            )
            style_x, content_x, targets = stack_triplets(triplets)
            graph = Graph()
            with graph:
                generated = net.forward_generate(
                    Tensor(style_x), Tensor(content_x), mode="train",
                    zero_skips=config.zero_skips,
                )
                loss = weighted_l1_loss(generated, targets)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                ids = [(t.style_id, t.content_id) for t in triplets]
                raise TrainingError(
                    f"non-finite loss {loss_value} at step {step} on batch {ids}"
                )
            graph.backward(loss)
            clip_gradients(net.params, config.clip_norm)
            adam_step(net.params, adam)
            net.params.zero_grad()
            wall_ms = (time.perf_counter() - t0) * 1000.0
            line = f"{step},{loss_value:.10g},{wall_ms:.1f}"
            losses.append(loss_value)
            log_lines.append(line)
            if log_file:
                log_file.write(line + "\n")
            if (config.eval_every and eval_suites is not None
                    and (offset + 1) % config.eval_every == 0):
                eval_history.append((step, evaluate(net, eval_suites)))
    finally:
        if log_file:
            log_file.close()
    return TrainResult(net=net, losses=losses, log_lines=log_lines,
                       eval_history=eval_history)


def evaluate(net: FontNet, eval_suites: dict) -> dict:
    """Mean L1/RMSE/PDAR of eval-mode generations against targets per suite."""
    results: dict = {}
    for cell, items in eval_suites.items():
        if not items:
            raise ValueError(f"evaluation suite {cell!r} is empty")
        l1 = rmse = pdar = 0.0
        for item in items:
            generated = net.generate_from_refs(
                item.style_refs.images, item.content_refs.images
            )
            l1 += l1_metric(generated, item.target)
            rmse += rmse_metric(generated, item.target)
            pdar += pdar_metric(generated, item.target)
        n = len(items)
        results[cell] = SuiteMetrics(l1=l1 / n, rmse=rmse / n, pdar=pdar / n)
    return results


def train_and_evaluate(config: TrainConfig, corpus: Corpus, r_eval: int | None = None,
                       eval_seed: int = 0, per_set: int = 24):
    """Convenience wrapper: train then score the four cells."""
    result = train(config, corpus)
    suites = build_eval_sets(corpus, r_eval or config.r, eval_seed, per_set=per_set)
    return result, evaluate(result.net, suites)


# ---------------------------------------------------------------------------
# single-pair stylization training
# ---------------------------------------------------------------------------


def train_nst_pair(net: NstNet, extractor: FeatureExtractor, style_img, content_img,
                   steps: int = 500, learning_rate: float = 1e-3,
                   weights: LossWeights = LossWeights(),
                   optimize_prefix: str = "decoder.", clip_norm: float = 10.0) -> list:
    """Optimize one subnet (the decoder by default) on one style/content pair.

    Returns the per-step total-loss trace.
    """
    style = Tensor(np.asarray(style_img, dtype=np.float64))
    content = Tensor(np.asarray(content_img, dtype=np.float64))
    subset = {name: p for name, p in net.params.items()
              if name.startswith(optimize_prefix)}
    if not subset:
        raise TrainingError(f"no parameters match prefix {optimize_prefix!r}")
    adam = AdamState(learning_rate=learning_rate)
    trace: list = []
    for step in range(steps):
        graph = Graph()
        with graph:
            generated = net.forward(style, content)
            loss, _ = nst_objective(extractor, generated, content, style, weights)
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise TrainingError(f"non-finite stylization loss {loss_value} at step {step}")
        graph.backward(loss)
        clip_gradients(subset, clip_norm)
        adam_step(subset, adam)
        net.params.zero_grad()
        trace.append(loss_value)
    return trace
