"""Training loop, evaluation, branch fusion and complexity accounting."""

import itertools
import json
import logging
import os
import time
from dataclasses import asdict
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from spstgcn.dataclasses import (
    BranchDataset,
    ComplexityReport,
    DtwConfig,
    EpochRecord,
    EvalReport,
    FeatureTensor,
    GraphSpec,
    ModelConfig,
    OptimState,
    RunMetrics,
    Schedule,
    TrainConfig,
)
from spstgcn.enums import Branch
from spstgcn.errors import LabelOutOfRange, ShapeMismatch
from spstgcn.nn.checkpoint import save_checkpoint
from spstgcn.nn.model import SpStGcnModel, cross_entropy_loss, model_forward, predict
from spstgcn.preprocess import preprocess_all
from spstgcn.struct_adj import precompute_adjacency

logger = logging.getLogger(__name__)

# Overheads of the structural branch reported for the original model, printed for comparison only.
REFERENCE_FLOPS_OVERHEAD = 0.153
REFERENCE_PARAMS_OVERHEAD = 0.091

BRANCH_LETTERS = {Branch.JOINT: "J", Branch.VELOCITY: "V", Branch.BONE: "B"}
METRICS_FILE = "metrics.jsonl"


def sgd_nesterov_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimState,
    lr: float,
) -> None:
    """Apply one SGD step in place.

    `g = grad + weight_decay * p`, `v = momentum * v + g`, then `p -= lr * (g + momentum * v)`
    with Nesterov momentum or `p -= lr * v` without.

    ### Raises:
    - `ShapeMismatch`: A gradient or velocity buffer disagrees with its parameter.
    """
    for name, p in params.items():
        grad = np.asarray(grads[name], dtype = np.float64)
        if grad.shape != p.shape:
            raise ShapeMismatch(f"Gradient of {name} has shape {grad.shape}, parameter has {p.shape}.")
        velocity = state.velocity.setdefault(name, np.zeros_like(p))
        if velocity.shape != p.shape:
            raise ShapeMismatch(f"Velocity of {name} has shape {velocity.shape}, parameter has {p.shape}.")
        g = grad + state.weight_decay * p
        velocity *= state.momentum
        velocity += g
        if state.nesterov:
            p -= lr * (g + state.momentum * velocity)
        else:
            p -= lr * velocity


def cosine_lr(epoch: int, schedule: Optional[Schedule] = None) -> float:
    """Learning rate of a 1-based epoch: constant through the warm epochs, then cosine to zero."""
    return (schedule or Schedule()).lr(epoch)


def batches(count: int, batch_size: int, rng: Optional[np.random.Generator] = None) -> List[np.ndarray]:
    """Split `range(count)` into batches, shuffled when `rng` is given; the last batch may be short."""
    order = rng.permutation(count) if rng is not None else np.arange(count)
    return [order[start:start + batch_size] for start in range(0, count, batch_size)]


def build_branch_dataset(
    tensors: Sequence[FeatureTensor],
    labels: Sequence[int],
    graph: GraphSpec,
    dtw_cfg: Optional[DtwConfig] = None,
    ids: Optional[Sequence[str]] = None,
    jobs: Optional[int] = 1,
    progress: bool = False,
    adjacency: Optional[Mapping[Branch, np.ndarray]] = None,
) -> BranchDataset:
    """Preprocess raw tensors into branch inputs and attach structural matrices.

    Shared matrices are computed from raw coordinates; with `dtw_cfg.per_branch` each branch
    gets matrices computed from its own features. Precomputed `adjacency` skips the computation.
    """
    dtw_cfg = dtw_cfg or DtwConfig()
    if len(tensors) != len(labels):
        raise ShapeMismatch(f"{len(tensors)} tensors for {len(labels)} labels.")
    sets = [preprocess_all(t, graph) for t in tqdm(tensors, desc = "preprocess", disable = not progress)]
    inputs = {
        branch: np.stack([s.get(branch).data for s in sets]) if sets else np.zeros((0, 6, 1, graph.joint_count, 1))
        for branch in Branch
    }
    if adjacency is not None:
        As = {branch: np.asarray(adjacency[branch], dtype = np.float64) for branch in Branch}
    elif dtw_cfg.per_branch:
        As = {
            branch: precompute_adjacency([s.get(branch) for s in sets], graph, dtw_cfg, jobs, progress)
            for branch in Branch
        }
    else:
        shared = precompute_adjacency(tensors, graph, dtw_cfg, jobs, progress)
        As = {branch: shared for branch in Branch}
    return BranchDataset(
        inputs = inputs,
        labels = np.asarray(labels, dtype = np.int64),
        As = As,
        ids = list(ids) if ids is not None else [str(i) for i in range(len(tensors))],
    )


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return 0.0
    return float(np.mean(np.argmax(logits, axis = 1) == labels))


def fuse_scores(*logits: np.ndarray, weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """Weighted sum of branch logits followed by an argmax that prefers the lowest class index on ties.

    Accepts `(num_classes,)` vectors or `(N, num_classes)` arrays and returns one prediction per row.
    """
    if not logits:
        raise ShapeMismatch("Nothing to fuse.")
    weights = [1.0] * len(logits) if weights is None else list(weights)
    if len(weights) != len(logits):
        raise ShapeMismatch(f"{len(weights)} weights for {len(logits)} logit arrays.")
    arrays = [np.asarray(item, dtype = np.float64) for item in logits]
    if len({a.shape for a in arrays}) != 1:
        raise ShapeMismatch(f"Logit shapes differ: {[a.shape for a in arrays]}.")
    total = sum(w * a for w, a in zip(weights, arrays))
    return np.argmax(total, axis = -1)


def fusion_grid(
    logits: Mapping[Branch, np.ndarray],
    labels: np.ndarray,
    weights: Optional[Mapping[Branch, float]] = None,
) -> Dict[str, float]:
    """Accuracy of every non-empty subset of branches, keyed like `"J"`, `"J+V"` or `"J+V+B"`."""
    branches = [b for b in Branch if b in logits]
    weights = weights or {}
    grid = {}
    for size in range(1, len(branches) + 1):
        for subset in itertools.combinations(branches, size):
            key = "+".join(BRANCH_LETTERS[b] for b in subset)
            predictions = fuse_scores(*(logits[b] for b in subset), weights = [weights.get(b, 1.0) for b in subset])
            grid[key] = float(np.mean(predictions == labels)) if len(labels) else 0.0
    return grid


def evaluate(
    models: Mapping[Branch, SpStGcnModel],
    dataset: BranchDataset,
    weights: Optional[Mapping[Branch, float]] = None,
    batch_size: int = 64,
) -> EvalReport:
    """Evaluation-mode accuracy of every branch model, their fusion, and the subset grid."""
    logits = {
        branch: predict(model, dataset.inputs[branch], dataset.As[branch], batch_size)
        for branch, model in models.items()
    }
    grid = fusion_grid(logits, dataset.labels, weights)
    full = "+".join(BRANCH_LETTERS[b] for b in Branch if b in logits)
    return EvalReport(
        branch_accuracy = {b.value: accuracy(values, dataset.labels) for b, values in logits.items()},
        fused_accuracy = grid.get(full, 0.0),
        grid = grid,
        logits = {b.value: values for b, values in logits.items()},
    )


class MetricsWriter:
    """Appends `EpochRecord`s to a JSON-lines file and keeps them in a `RunMetrics`."""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self.metrics = RunMetrics()
        if path is not None:
            open(path, "w", encoding = "utf-8").close()

    def emit(self, record: EpochRecord) -> None:
        self.metrics.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding = "utf-8") as f:
                f.write(json.dumps(asdict(record)) + "\n")


def read_metrics(path: str) -> RunMetrics:
    with open(path, "r", encoding = "utf-8") as f:
        return RunMetrics(records = [EpochRecord(**json.loads(line)) for line in f if line.strip()])


def train_epoch(
    model: SpStGcnModel,
    data: np.ndarray,
    As: np.ndarray,
    labels: np.ndarray,
    state: OptimState,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
    progress: bool = False,
    desc: str = "",
) -> Tuple[float, float]:
    """One pass over shuffled batches; returns the sample-weighted mean loss and accuracy."""
    model.train()
    params = model.parameters()
    total_loss, correct = 0.0, 0
    for index in tqdm(batches(len(labels), batch_size, rng), desc = desc, disable = not progress, leave = False):
        model.zero_grad()
        logits = model_forward(model, data[index], As[index])
        loss = cross_entropy_loss(logits, labels[index])
        loss.backward()
        sgd_nesterov_step(
            {name: p.value for name, p in params.items()},
            {name: p.grad for name, p in params.items()},
            state,
            lr,
        )
        total_loss += float(loss.value) * len(index)
        correct += int(np.sum(np.argmax(logits.value, axis = 1) == labels[index]))
    return total_loss / len(labels), correct / len(labels)


def _eval_loss(model: SpStGcnModel, data: np.ndarray, As: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    logits = predict(model, data, As)
    shifted = logits - logits.max(axis = 1, keepdims = True)
    log_norm = np.log(np.exp(shifted).sum(axis = 1))
    loss = float(np.mean(log_norm - shifted[np.arange(len(labels)), labels]))
    return loss, logits


def train(
    dataset: BranchDataset,
    graph: GraphSpec,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    seed: int = 0,
    eval_dataset: Optional[BranchDataset] = None,
    out_dir: Optional[str] = None,
) -> Tuple[Dict[Branch, SpStGcnModel], RunMetrics]:
    """Train one model per branch with a shared schedule.

    Branches advance epoch by epoch in lockstep so the fused evaluation accuracy can be reported
    every epoch. Every branch draws its initialization, shuffling and dropout from its own
    generator seeded from `seed`, so runs are reproducible.

    ### Args:
    - `dataset`: Training data.
    - `eval_dataset`: Optional held-out data evaluated after every epoch.
    - `out_dir`: When given, receives `metrics.jsonl` and one `<branch>.ckpt` per branch.
    """
    if len(dataset) == 0:
        raise ShapeMismatch("Cannot train on an empty dataset.")
    if np.any(dataset.labels < 0) or np.any(dataset.labels >= model_cfg.num_classes):
        raise LabelOutOfRange(f"Training labels must lie in [0, {model_cfg.num_classes}).")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok = True)
    writer = MetricsWriter(os.path.join(out_dir, METRICS_FILE) if out_dir is not None else None)
    weights = dict(zip(train_cfg.branches, train_cfg.fusion_weights))

    seeds = np.random.SeedSequence(seed).spawn(len(train_cfg.branches))
    models, states, rngs = {}, {}, {}
    for branch, branch_seed in zip(train_cfg.branches, seeds):
        init_seed, shuffle_seed = branch_seed.generate_state(2)
        models[branch] = SpStGcnModel(model_cfg, graph, seed = int(init_seed))
        rngs[branch] = np.random.default_rng(int(shuffle_seed))
        states[branch] = OptimState(
            momentum = train_cfg.momentum,
            weight_decay = train_cfg.weight_decay,
            nesterov = train_cfg.nesterov,
        )

    start = time.perf_counter()
    for epoch in range(1, train_cfg.epochs + 1):
        lr = train_cfg.schedule.lr(epoch)
        for branch, model in models.items():
            loss, acc = train_epoch(
                model,
                dataset.inputs[branch],
                dataset.As[branch],
                dataset.labels,
                states[branch],
                lr,
                train_cfg.batch_size,
                rngs[branch],
                train_cfg.progress,
                f"epoch {epoch} {branch.value}",
            )
            writer.emit(EpochRecord(epoch, branch.value, "train", loss, acc, lr))
            logger.info("Epoch %d %s: loss %.4f, accuracy %.3f, lr %.4g.", epoch, branch.value, loss, acc, lr)

        if eval_dataset is not None:
            logits = {}
            for branch, model in models.items():
                loss, logits[branch] = _eval_loss(
                    model, eval_dataset.inputs[branch], eval_dataset.As[branch], eval_dataset.labels
                )
                writer.emit(EpochRecord(epoch, branch.value, "eval", loss, accuracy(logits[branch], eval_dataset.labels), lr))
            fused = float(np.mean(fuse_scores(*logits.values(), weights = [weights[b] for b in logits]) == eval_dataset.labels))
            writer.emit(EpochRecord(epoch, "fused", "eval", None, fused, lr))
            logger.info("Epoch %d fused eval accuracy %.3f.", epoch, fused)

    writer.metrics.wall_time = time.perf_counter() - start
    if out_dir is not None:
        for branch, model in models.items():
            save_checkpoint(os.path.join(out_dir, f"{branch.value}.ckpt"), model)
    return models, writer.metrics


def _layer_counts(c_in: int, c_out: int, partitions: int, V: int, T: int, M: int) -> Tuple[int, int, int, int]:
    """Parameters and multiply-adds of one SpSt-GCN layer as `(params, flops, structural params, structural flops)`."""
    params = partitions * (c_in * c_out + V * V)
    flops = partitions * (c_out * c_in * T * V * M + c_out * T * V * V * M)
    return params, flops, c_in * c_out, c_out * c_in * T * V * M + c_out * T * V * V * M


def count_params_flops(
    cfg: ModelConfig,
    joint_count: int = 25,
    frames: int = 64,
    bodies: int = 2,
) -> ComplexityReport:
    """Count parameters and forward multiply-adds per sample for the Sp-GCN and SpSt-GCN variants.

    Multiply-adds cover the graph convolutions, temporal and residual convolutions and the
    classifier. Normalization, activations and pooling are not counted.
    """
    V, T, M = joint_count, frames, bodies
    partitions = cfg.max_hop + 1
    params = 2 * cfg.in_channels
    flops = 0
    extra_params = extra_flops = 0

    p, f, sp, sf = _layer_counts(cfg.in_channels, cfg.init_channels, partitions, V, T, M)
    params += p + 2 * cfg.init_channels
    flops += f
    extra_params, extra_flops = extra_params + sp, extra_flops + sf

    width = cfg.init_channels
    for out_width, stride in cfg.blocks:
        p, f, sp, sf = _layer_counts(width, out_width, partitions, V, T, M)
        extra_params, extra_flops = extra_params + sp, extra_flops + sf
        t_out = (T - 1) // stride + 1
        params += p + 2 * out_width + out_width * out_width * cfg.temporal_kernel + out_width
        flops += f + out_width * out_width * cfg.temporal_kernel * t_out * V * M
        if width != out_width or stride != 1:
            params += width * out_width + out_width
            flops += width * out_width * t_out * V * M
        width, T = out_width, t_out

    params += width * cfg.num_classes + cfg.num_classes
    flops += width * cfg.num_classes
    return ComplexityReport(
        params_spatial = params,
        params_structural = params + extra_params,
        flops_spatial = flops,
        flops_structural = flops + extra_flops,
        structural_weights = extra_params,
    )


def edge_node_similarity(
    model: SpStGcnModel,
    x: np.ndarray,
    As: Optional[np.ndarray] = None,
    edge_nodes: Optional[Sequence[int]] = None,
) -> float:
    """Mean pairwise cosine similarity of edge-node feature columns after the last block.

    Each edge node of the primary body is described by its `(C, T')` feature map, flattened.
    Higher values mean the edge nodes have become harder to tell apart.
    """
    nodes = list(edge_nodes if edge_nodes is not None else model.graph.edge_nodes)
    was_training = model.training
    model.eval()
    try:
        _, features = model_forward(model, x, As, return_features = True)
    finally:
        model.train(was_training)
    values = features.value[:, :, :, nodes, 0]
    columns = values.transpose(0, 3, 1, 2).reshape(values.shape[0], len(nodes), -1)
    norms = np.linalg.norm(columns, axis = 2, keepdims = True)
    unit = columns / np.maximum(norms, 1e-12)
    similarity = np.einsum("nac,nbc->nab", unit, unit)
    upper = np.triu_indices(len(nodes), k = 1)
    return float(np.mean(similarity[:, upper[0], upper[1]]))
