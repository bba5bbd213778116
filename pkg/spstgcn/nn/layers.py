"""Graph-convolution layers and blocks of the two-branch network."""

import math
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from spstgcn.dataclasses import SpatialAdjacency
from spstgcn.enums import TensorRole
from spstgcn.errors import ShapeMismatch
from spstgcn.nn.tensor import (
    DiffTensor,
    add,
    batch_norm,
    constant,
    einsum,
    relu,
    temporal_conv,
)


def parameter(value: np.ndarray, name: str = "") -> DiffTensor:
    return DiffTensor(value, TensorRole.PARAMETER, name = name)


def uniform_fan_in(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size = shape)


class Module:
    """
    Base class for anything holding parameters.

    Subclasses register parameters in `_params`, buffers (non-learned arrays saved in
    checkpoints) in `_buffers`, and child modules in `_children`.

    ### Methods

    - `named_parameters`: Yield `(dotted_name, DiffTensor)` pairs.
    - `named_buffers`: Yield `(dotted_name, np.ndarray)` pairs.
    - `train`, `eval`: Switch the training flag of this module and every child.
    - `zero_grad`: Reset every parameter gradient.
    """

    def __init__(self):
        self._params: Dict[str, DiffTensor] = {}
        self._buffers: Dict[str, np.ndarray] = {}
        self._children: Dict[str, "Module"] = {}
        self.training = True

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, DiffTensor]]:
        for name, param in self._params.items():
            yield prefix + name, param
        for child_name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{child_name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, buffer in self._buffers.items():
            yield prefix + name, buffer
        for child_name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{child_name}.")

    def parameters(self) -> Dict[str, DiffTensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters().values())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for param in self.parameters().values():
            param.zero_grad()


class SpStGcnLayerParams(Module):
    """
    Holds the weights of one spatial-structural graph convolution.

    ### Attributes

    - `W` (`list`): One `(C_out, C_in)` weight per spatial partition.
    - `B` (`list`): One `(V, V)` additive matrix per partition, initialized to zeros.
    - `M` (`DiffTensor`): `(C_out, C_in)` weight of the structural branch, `None` when disabled.
    """

    def __init__(self, c_in: int, c_out: int, partitions: int, V: int, structural: bool, rng: np.random.Generator):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.W = [parameter(uniform_fan_in(rng, (c_out, c_in), c_in * partitions), f"W_{j}") for j in range(partitions)]
        self.B = [parameter(np.zeros((V, V)), f"B_{j}") for j in range(partitions)]
        self.M = parameter(uniform_fan_in(rng, (c_out, c_in), c_in), "M_1") if structural else None
        for j in range(partitions):
            self._params[f"W_{j}"] = self.W[j]
            self._params[f"B_{j}"] = self.B[j]
        if self.M is not None:
            self._params["M_1"] = self.M


def _check_input(f_in: DiffTensor, c_in: int, V: int) -> None:
    if f_in.value.ndim != 5 or f_in.shape[1] != c_in or f_in.shape[3] != V:
        raise ShapeMismatch(f"Expected (N, {c_in}, T, {V}, M) input, got {f_in.shape}.")


def spatial_gcn_forward(f_in: DiffTensor, adj: SpatialAdjacency, p: SpStGcnLayerParams) -> DiffTensor:
    """Sum over partitions of `W_j f_in (A_j + B_j)`, applied per frame and body.

    ### Raises:
    - `ShapeMismatch`: Input channels, joint count or partition count disagree with `p`.
    """
    V = adj.partitions.shape[1]
    _check_input(f_in, p.c_in, V)
    if len(p.W) != adj.count:
        raise ShapeMismatch(f"{len(p.W)} weights for {adj.count} partitions.")
    out = None
    for j in range(adj.count):
        graph = add(constant(adj.partitions[j]), p.B[j])
        term = einsum("oc,nctvm,vw->notwm", p.W[j], f_in, graph)
        out = term if out is None else add(out, term)
    return out


def structural_gcn_forward(f_in: DiffTensor, As: DiffTensor, p: SpStGcnLayerParams) -> DiffTensor:
    """`M_1 f_in As` with one `(V, V)` matrix per sample; `As` is data and gets no gradient.

    ### Raises:
    - `ShapeMismatch`: `As` is not `(N, V, V)` for the batch, or the structural branch is disabled.
    """
    As = constant(As)
    if p.M is None:
        raise ShapeMismatch("This layer was built without a structural branch.")
    N, _, _, V, _ = f_in.shape
    _check_input(f_in, p.c_in, V)
    if As.shape != (N, V, V):
        raise ShapeMismatch(f"Expected structural matrices of shape ({N}, {V}, {V}), got {As.shape}.")
    return einsum("oc,nctvm,nvw->notwm", p.M, f_in, As)


def spst_gcn_forward(
    f_in: DiffTensor,
    adj: SpatialAdjacency,
    As: Optional[DiffTensor],
    p: SpStGcnLayerParams,
) -> DiffTensor:
    """Element-wise sum of the spatial and structural branches.

    Without a structural weight (or without `As`) the spatial output is returned unchanged.
    """
    spatial = spatial_gcn_forward(f_in, adj, p)
    if p.M is None or As is None:
        return spatial
    return add(spatial, structural_gcn_forward(f_in, As, p))


class BatchNorm(Module):
    """Per-channel batch normalization with running statistics."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = parameter(np.ones(channels), "gamma")
        self.beta = parameter(np.zeros(channels), "beta")
        self._params.update(gamma = self.gamma, beta = self.beta)
        self._buffers.update(running_mean = np.zeros(channels), running_var = np.ones(channels))

    def __call__(self, x: DiffTensor) -> DiffTensor:
        return batch_norm(
            x,
            self.gamma,
            self.beta,
            self._buffers["running_mean"],
            self._buffers["running_var"],
            self.training,
            self.momentum,
            self.eps,
        )


class TemporalConv(Module):
    """Convolution along frames with an `(C_out, C_in, K)` kernel and a bias."""

    def __init__(self, c_in: int, c_out: int, kernel_size: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.stride = stride
        self.weight = parameter(uniform_fan_in(rng, (c_out, c_in, kernel_size), c_in * kernel_size), "weight")
        self.bias = parameter(np.zeros(c_out), "bias")
        self._params.update(weight = self.weight, bias = self.bias)

    def __call__(self, x: DiffTensor) -> DiffTensor:
        return temporal_conv_forward(x, self.weight, self.bias, self.stride)


def temporal_conv_forward(
    f_in: DiffTensor,
    weight: DiffTensor,
    bias: Optional[DiffTensor] = None,
    stride: int = 1,
) -> DiffTensor:
    """Per-joint convolution along `T`, see `spstgcn.nn.tensor.temporal_conv`."""
    return temporal_conv(f_in, weight, bias, stride)


class SpStGcnLayer(Module):
    """One spatial-structural graph convolution bound to its spatial adjacency."""

    def __init__(self, c_in: int, c_out: int, adj: SpatialAdjacency, structural: bool, rng: np.random.Generator):
        super().__init__()
        self.adj = adj
        self.params = SpStGcnLayerParams(c_in, c_out, adj.count, adj.partitions.shape[1], structural, rng)
        self._children["gcn"] = self.params

    def __call__(self, x: DiffTensor, As: Optional[DiffTensor]) -> DiffTensor:
        return spst_gcn_forward(x, self.adj, As, self.params)


class InitialBlock(Module):
    """Input normalization, then SpSt-GCN layer, batch normalization and ReLU."""

    def __init__(self, c_in: int, c_out: int, adj: SpatialAdjacency, structural: bool, rng, momentum: float, eps: float):
        super().__init__()
        self.input_bn = BatchNorm(c_in, momentum, eps)
        self.gcn = SpStGcnLayer(c_in, c_out, adj, structural, rng)
        self.bn = BatchNorm(c_out, momentum, eps)
        self._children.update(input_bn = self.input_bn, layer = self.gcn, bn = self.bn)

    def __call__(self, x: DiffTensor, As: Optional[DiffTensor]) -> DiffTensor:
        return relu(self.bn(self.gcn(self.input_bn(x), As)))


class GcnBlock(Module):
    """SpSt-GCN layer, batch normalization, ReLU, temporal convolution, plus a residual path.

    The residual is the identity when shapes match and a strided 1-frame convolution otherwise.
    """

    def __init__(
        self,
        c_in: int,
        c_out: int,
        stride: int,
        kernel_size: int,
        adj: SpatialAdjacency,
        structural: bool,
        rng: np.random.Generator,
        momentum: float = 0.1,
        eps: float = 1e-5,
    ):
        super().__init__()
        self.gcn = SpStGcnLayer(c_in, c_out, adj, structural, rng)
        self.bn = BatchNorm(c_out, momentum, eps)
        self.tcn = TemporalConv(c_out, c_out, kernel_size, stride, rng)
        self._children.update(layer = self.gcn, bn = self.bn, tcn = self.tcn)
        self.residual: Optional[TemporalConv] = None
        if c_in != c_out or stride != 1:
            self.residual = TemporalConv(c_in, c_out, 1, stride, rng)
            self._children["residual"] = self.residual

    def __call__(self, x: DiffTensor, As: Optional[DiffTensor]) -> DiffTensor:
        return gcn_block_forward(x, As, self)


def gcn_block_forward(f_in: DiffTensor, As: Optional[DiffTensor], block: GcnBlock) -> DiffTensor:
    """Run one GCN block; see `GcnBlock`."""
    main = block.tcn(relu(block.bn(block.gcn(f_in, As))))
    shortcut = f_in if block.residual is None else block.residual(f_in)
    return add(main, shortcut)

