"""The full network for one input branch."""

import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from spstgcn.dataclasses import FeatureTensor, GraphSpec, ModelConfig
from spstgcn.errors import ShapeMismatch
from spstgcn.graph import spatial_adjacency
from spstgcn.nn.layers import (
    GcnBlock,
    InitialBlock,
    Module,
    parameter,
    uniform_fan_in,
)
from spstgcn.nn.tensor import (
    DiffTensor,
    add,
    constant,
    cross_entropy,
    dropout,
    einsum,
    max_over,
    mean,
)

logger = logging.getLogger(__name__)

BranchInput = Union[np.ndarray, FeatureTensor, DiffTensor]


class SpStGcnModel(Module):
    """
    Initial block, a stack of GCN blocks and a pooled linear classifier.

    ### Attributes

    - `cfg` (`ModelConfig`): The configuration the model was built from.
    - `graph` (`GraphSpec`): The skeleton topology.
    - `initial` (`InitialBlock`): First block.
    - `blocks` (`list`): The `GcnBlock`s in order.
    - `fc_weight`, `fc_bias` (`DiffTensor`): Classifier of shape `(N, C_last)` and `(N,)`.
    - `rng` (`np.random.Generator`): Source of dropout masks.
    """

    def __init__(self, cfg: ModelConfig, graph: GraphSpec, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.graph = graph
        self.adj = spatial_adjacency(graph, cfg.max_hop, cfg.alpha)
        rng = np.random.default_rng(seed)
        self.rng = np.random.default_rng(rng.integers(2 ** 32))

        momentum, eps = cfg.bn_momentum, cfg.bn_eps
        self.initial = InitialBlock(cfg.in_channels, cfg.init_channels, self.adj, cfg.structural, rng, momentum, eps)
        self._children["initial"] = self.initial
        self.blocks = []
        width = cfg.init_channels
        for index, (out_width, stride) in enumerate(cfg.blocks):
            block = GcnBlock(
                width, out_width, stride, cfg.temporal_kernel, self.adj, cfg.structural, rng, momentum, eps
            )
            self.blocks.append(block)
            self._children[f"block{index}"] = block
            width = out_width

        self.fc_weight = parameter(uniform_fan_in(rng, (cfg.num_classes, width), width), "weight")
        self.fc_bias = parameter(np.zeros(cfg.num_classes), "bias")
        self._params.update({"fc.weight": self.fc_weight, "fc.bias": self.fc_bias})
        logger.debug("Built a %d-block model with %d parameters.", len(self.blocks), self.num_parameters())

    def __call__(self, x: BranchInput, As=None, return_features: bool = False):
        return model_forward(self, x, As, return_features)


def _batch(x: BranchInput) -> DiffTensor:
    if isinstance(x, DiffTensor):
        return x
    if isinstance(x, FeatureTensor):
        return constant(x.data[None])
    return constant(np.asarray(x, dtype = np.float64))


def model_forward(
    model: SpStGcnModel,
    x: BranchInput,
    As=None,
    return_features: bool = False,
) -> Union[DiffTensor, Tuple[DiffTensor, DiffTensor]]:
    """Run the network on a batch of branch inputs.

    ### Args:
    - `x`: `(N, C, T, V, M)` array or `DiffTensor`, or a single `FeatureTensor`.
    - `As`: `(N, V, V)` structural matrices, ignored when the model has no structural branch.
    - `return_features`: Also return the `(N, C, T', V, M)` feature map after the last block.

    ### Returns:
    - `(N, num_classes)` logits, or `(logits, features)` when `return_features` is set.
    """
    x = _batch(x)
    if x.value.ndim != 5 or x.shape[1] != model.cfg.in_channels or x.shape[3] != model.graph.joint_count:
        raise ShapeMismatch(
            f"Expected (N, {model.cfg.in_channels}, T, {model.graph.joint_count}, M) input, got {x.shape}."
        )
    if not model.cfg.structural:
        As = None
    elif As is not None:
        As = constant(np.asarray(As.value if isinstance(As, DiffTensor) else As, dtype = np.float64))
        if As.value.ndim == 2:
            As = constant(As.value[None])

    features = model.initial(x, As)
    for block in model.blocks:
        features = block(features, As)

    pooled = max_over(mean(features, (2, 3)), 2)
    pooled = dropout(pooled, model.cfg.dropout, model.rng, model.training)
    logits = add(einsum("nc,kc->nk", pooled, model.fc_weight), model.fc_bias)
    return (logits, features) if return_features else logits


def cross_entropy_loss(logits: DiffTensor, label: Union[int, Sequence[int]]) -> DiffTensor:
    """Mean softmax cross-entropy; see `spstgcn.nn.tensor.cross_entropy`."""
    return cross_entropy(logits, label)


def predict(model: SpStGcnModel, x: BranchInput, As=None, batch_size: int = 64) -> np.ndarray:
    """Evaluation-mode logits for a whole array, computed in batches."""
    was_training = model.training
    model.eval()
    try:
        data = _batch(x).value
        As = None if As is None else np.asarray(As, dtype = np.float64)
        chunks = []
        for start in range(0, len(data), batch_size):
            stop = start + batch_size
            chunk_As = None if As is None else As[start:stop]
            chunks.append(model_forward(model, data[start:stop], chunk_As).value)
        return np.concatenate(chunks) if chunks else np.zeros((0, model.cfg.num_classes))
    finally:
        model.train(was_training)
