"""Central finite-difference checks of the reverse-mode gradients."""

import logging
from typing import Callable, Dict, Iterable, List

import numpy as np

from spstgcn.dataclasses import EdgeDistanceMatrix, GradCheckReport, GraphSpec, ModelConfig
from spstgcn.enums import TensorRole
from spstgcn.graph import make_graph, spatial_adjacency
from spstgcn.nn.layers import BatchNorm, GcnBlock, SpStGcnLayerParams, TemporalConv, spst_gcn_forward
from spstgcn.nn.model import SpStGcnModel, cross_entropy_loss, model_forward
from spstgcn.nn.tensor import DiffTensor
from spstgcn.struct_adj import structural_adjacency

logger = logging.getLogger(__name__)

STEP = 1e-5
LAYER_TOLERANCE = 1e-6
MODEL_TOLERANCE = 1e-5
LOSS_TOLERANCE = 1e-8
TINY = 1e-300


def numeric_gradient(scalar: Callable[[], float], tensor: DiffTensor, step: float = STEP) -> np.ndarray:
    """Central differences of `scalar()` with respect to every entry of `tensor.value`."""
    grad = np.zeros_like(tensor.value)
    for index in np.ndindex(tensor.shape):
        original = tensor.value[index]
        tensor.value[index] = original + step
        upper = scalar()
        tensor.value[index] = original - step
        lower = scalar()
        tensor.value[index] = original
        grad[index] = (upper - lower) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(analytic), initial = 0.0), np.max(np.abs(numeric), initial = 0.0), TINY)
    return float(np.max(np.abs(analytic - numeric), initial = 0.0) / scale)


def grad_check(
    forward: Callable[[], DiffTensor],
    tensors: Dict[str, DiffTensor],
    name: str,
    tolerance: float = LAYER_TOLERANCE,
    step: float = STEP,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode and finite-difference gradients of a random projection of `forward()`.

    The output is reduced to the scalar `sum(out * R)` with a fixed random `R`, so every output
    entry contributes. Every tensor in `tensors` is checked, inputs included.

    ### Args:
    - `forward`: Rebuilds the output from the current values of `tensors`.
    - `tensors`: The tensors to differentiate with respect to, by name.
    - `name`: Label of the report.
    - `tolerance`: Largest acceptable maximum relative error.
    """
    for tensor in tensors.values():
        tensor.requires_grad = True
        tensor.zero_grad()
    out = forward()
    projection = np.random.default_rng(seed).standard_normal(out.shape)
    out.backward(projection)

    def scalar() -> float:
        return float(np.sum(forward().value * projection))

    report = GradCheckReport(name = name, tolerance = tolerance)
    for tensor_name, tensor in tensors.items():
        analytic = tensor.grad.copy()
        report.errors[tensor_name] = relative_error(analytic, numeric_gradient(scalar, tensor, step))
    logger.debug("%s: max relative error %.3g (%s).", name, report.max_error, report)
    return report


def tiny_graph() -> GraphSpec:
    """A 4-joint star with the center at joint 1 and the other three joints as edge nodes."""
    return make_graph(4, [(1, 0), (1, 2), (1, 3)], center_joint = 1, edge_nodes = (0, 2, 3))


def _structural(rng: np.random.Generator, g: GraphSpec, batch: int) -> np.ndarray:
    matrices = []
    for _ in range(batch):
        D = np.zeros((g.joint_count, g.joint_count))
        for i, a in enumerate(g.edge_nodes):
            for b in g.edge_nodes[i + 1:]:
                D[a, b] = D[b, a] = rng.uniform(0.5, 2.0)
        matrices.append(structural_adjacency(EdgeDistanceMatrix(D, tuple(g.edge_nodes), 0)).As)
    return np.stack(matrices)


def _input(rng: np.random.Generator, shape) -> DiffTensor:
    return DiffTensor(rng.standard_normal(shape), TensorRole.INPUT, True, "f_in")


def check_spst_layer(seed: int = 0, tolerance: float = LAYER_TOLERANCE) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    g = tiny_graph()
    adj = spatial_adjacency(g)
    params = SpStGcnLayerParams(2, 3, adj.count, g.joint_count, True, rng)
    for B in params.B:
        B.value[...] = 0.1 * rng.standard_normal(B.shape)
    f_in = _input(rng, (2, 2, 3, 4, 1))
    As = _structural(rng, g, 2)
    tensors = {"f_in": f_in, **params.parameters()}
    return grad_check(lambda: spst_gcn_forward(f_in, adj, As, params), tensors, "spst_gcn_layer", tolerance, seed = seed)


def check_temporal_conv(seed: int = 0, tolerance: float = LAYER_TOLERANCE) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    conv = TemporalConv(2, 3, 3, 2, rng)
    conv.bias.value[...] = rng.standard_normal(3)
    f_in = _input(rng, (2, 2, 5, 3, 1))
    tensors = {"f_in": f_in, **conv.parameters()}
    return grad_check(lambda: conv(f_in), tensors, "temporal_conv", tolerance, seed = seed)


def check_batch_norm(seed: int = 0, tolerance: float = LAYER_TOLERANCE) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    bn = BatchNorm(3)
    bn.gamma.value[...] = rng.uniform(0.5, 1.5, 3)
    f_in = _input(rng, (2, 3, 3, 4, 1))
    tensors = {"f_in": f_in, **bn.parameters()}
    return grad_check(lambda: bn(f_in), tensors, "batch_norm", tolerance, seed = seed)


def check_gcn_block(seed: int = 0, tolerance: float = LAYER_TOLERANCE) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    g = tiny_graph()
    adj = spatial_adjacency(g)
    block = GcnBlock(2, 3, 1, 3, adj, True, rng)
    f_in = _input(rng, (2, 2, 4, 4, 1))
    As = _structural(rng, g, 2)
    tensors = {"f_in": f_in, **block.parameters()}
    return grad_check(lambda: block(f_in, As), tensors, "gcn_block", tolerance, seed = seed)


def check_model(seed: int = 0, tolerance: float = MODEL_TOLERANCE) -> GradCheckReport:
    """A 1-block model in training mode with dropout disabled."""
    rng = np.random.default_rng(seed)
    g = tiny_graph()
    cfg = ModelConfig(in_channels = 2, init_channels = 3, blocks = ((4, 2),), temporal_kernel = 3, dropout = 0.0, num_classes = 3)
    model = SpStGcnModel(cfg, g, seed = seed)
    f_in = _input(rng, (2, 2, 4, 4, 2))
    As = _structural(rng, g, 2)
    tensors = {"f_in": f_in, **model.parameters()}
    return grad_check(lambda: model_forward(model, f_in, As), tensors, "model_1_block", tolerance, seed = seed)


def check_loss(seed: int = 0, tolerance: float = LOSS_TOLERANCE) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    logits = _input(rng, (3, 5))
    logits.name = "logits"
    labels = rng.integers(0, 5, size = 3)
    return grad_check(lambda: cross_entropy_loss(logits, labels), {"logits": logits}, "cross_entropy", tolerance, seed = seed)


CHECKS = (check_spst_layer, check_temporal_conv, check_batch_norm, check_gcn_block, check_model, check_loss)


def run_grad_checks(seeds: Iterable[int] = range(10)) -> List[GradCheckReport]:
    """Run every check once per seed."""
    reports = []
    for seed in seeds:
        for check in CHECKS:
            report = check(seed)
            report.name = f"{report.name}[seed={seed}]"
            reports.append(report)
    return reports
