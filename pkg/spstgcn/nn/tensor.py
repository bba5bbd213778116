"""A small reverse-mode differentiation engine over numpy arrays."""

from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from spstgcn.enums import TensorRole
from spstgcn.errors import LabelOutOfRange, ShapeMismatch

ArrayLike = Union[np.ndarray, float, Sequence]


class DiffTensor:
    """
    Represents a value together with the gradient of a scalar with respect to it.

    ### Attributes

    - `value` (`np.ndarray`): The 64-bit float value.
    - `grad` (`np.ndarray`): Accumulated gradient, same shape as `value`.
    - `role` (`TensorRole`): Whether this is an input, a parameter or an intermediate.
    - `requires_grad` (`bool`): Whether gradients flow into this tensor. Defaults to `True`
        for parameters and `False` for inputs.
    - `name` (`str`): Optional name, used by gradient reports and checkpoints.

    ### Methods

    - `backward`: Propagate gradients from this tensor to everything it was computed from.
    - `zero_grad`: Reset `grad` to zeros.
    """

    def __init__(
        self,
        value: ArrayLike,
        role: TensorRole = TensorRole.INPUT,
        requires_grad: Optional[bool] = None,
        name: str = "",
    ):
        self.value = np.array(value, dtype = np.float64)
        self.role = role
        self.requires_grad = role is TensorRole.PARAMETER if requires_grad is None else requires_grad
        self.name = name
        self._grad: Optional[np.ndarray] = None
        self._parents: Tuple["DiffTensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, value: np.ndarray) -> None:
        self._grad = np.asarray(value, dtype = np.float64)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self._grad = None

    def accumulate(self, grad: np.ndarray) -> None:
        if self.requires_grad:
            self.grad = self.grad + grad

    def backward(self, grad: Optional[ArrayLike] = None) -> None:
        """Run reverse-mode differentiation from this tensor.

        ### Args:
        - `grad`: Seed gradient; defaults to ones, which is the usual choice for a scalar loss.
        """
        if not self.requires_grad:
            return
        seed = np.ones_like(self.value) if grad is None else np.asarray(grad, dtype = np.float64)
        if seed.shape != self.value.shape:
            raise ShapeMismatch(f"Seed gradient shape {seed.shape} differs from value shape {self.value.shape}.")
        order = _topological(self)
        for node in order:
            if node.role is TensorRole.INTERMEDIATE:
                node._grad = None
        self.grad = self.grad + seed
        for node in reversed(order):
            if node._backward is not None and node._grad is not None:
                node._backward(node._grad)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"DiffTensor({self.role.value}, shape={self.value.shape}{', ' + self.name if self.name else ''})"


def _topological(root: DiffTensor) -> List[DiffTensor]:
    order: List[DiffTensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def constant(value: ArrayLike, name: str = "") -> DiffTensor:
    """Wrap data that never receives a gradient."""
    return value if isinstance(value, DiffTensor) else DiffTensor(value, TensorRole.INPUT, False, name)


def _result(value: np.ndarray, parents: Iterable[DiffTensor], backward: Callable[[np.ndarray], None]) -> DiffTensor:
    parents = tuple(parents)
    out = DiffTensor(value, TensorRole.INTERMEDIATE, any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis = 0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis = axis, keepdims = True)
    return grad


def add(a, b) -> DiffTensor:
    a, b = constant(a), constant(b)

    def backward(grad):
        a.accumulate(unbroadcast(grad, a.shape))
        b.accumulate(unbroadcast(grad, b.shape))

    return _result(a.value + b.value, (a, b), backward)


def mul(a, b) -> DiffTensor:
    a, b = constant(a), constant(b)

    def backward(grad):
        a.accumulate(unbroadcast(grad * b.value, a.shape))
        b.accumulate(unbroadcast(grad * a.value, b.shape))

    return _result(a.value * b.value, (a, b), backward)


def _parse_subscripts(subscripts: str, count: int) -> Tuple[List[str], str]:
    if "->" not in subscripts or "." in subscripts:
        raise ValueError(f"einsum needs explicit output subscripts without ellipsis, got {subscripts!r}.")
    inputs, output = subscripts.replace(" ", "").split("->")
    subs = inputs.split(",")
    if len(subs) != count:
        raise ValueError(f"{subscripts!r} names {len(subs)} operands, got {count}.")
    for sub in subs + [output]:
        if len(set(sub)) != len(sub):
            raise ValueError(f"Repeated index inside one operand is not supported: {sub!r}.")
    return subs, output


def _einsum_grad(subs: List[str], output: str, k: int, grad: np.ndarray, values: List[np.ndarray]) -> np.ndarray:
    target = subs[k]
    other_subs = [s for i, s in enumerate(subs) if i != k]
    other_values = [v for i, v in enumerate(values) if i != k]
    available = set(output).union(*other_subs) if other_subs else set(output)
    kept = "".join(c for c in target if c in available)
    if output:
        partial = np.einsum(",".join([output] + other_subs) + "->" + kept, grad, *other_values, optimize = True)
    elif other_subs:
        partial = float(grad) * np.einsum(",".join(other_subs) + "->" + kept, *other_values, optimize = True)
    else:
        partial = np.asarray(float(grad))
    if kept != target:
        shape = [size if c in available else 1 for c, size in zip(target, values[k].shape)]
        partial = np.broadcast_to(np.reshape(partial, shape), values[k].shape)
    return partial


def einsum(subscripts: str, *operands) -> DiffTensor:
    """Differentiable `np.einsum` with explicit output subscripts.

    The gradient for each operand is another einsum of the output gradient with the remaining
    operands; indices summed inside a single operand are broadcast back.
    """
    operands = [constant(op) for op in operands]
    subs, output = _parse_subscripts(subscripts, len(operands))
    values = [op.value for op in operands]
    value = np.einsum(subscripts, *values, optimize = True)

    def backward(grad):
        for k, op in enumerate(operands):
            if op.requires_grad:
                op.accumulate(_einsum_grad(subs, output, k, grad, values))

    return _result(np.asarray(value, dtype = np.float64), operands, backward)


def relu(x: DiffTensor) -> DiffTensor:
    mask = x.value > 0

    def backward(grad):
        x.accumulate(grad * mask)

    return _result(np.where(mask, x.value, 0.0), (x,), backward)


def mean(x: DiffTensor, axes: Tuple[int, ...]) -> DiffTensor:
    count = int(np.prod([x.shape[a] for a in axes]))

    def backward(grad):
        x.accumulate(np.broadcast_to(np.expand_dims(grad, axes), x.shape) / count)

    return _result(x.value.mean(axis = axes), (x,), backward)


def max_over(x: DiffTensor, axis: int) -> DiffTensor:
    """Maximum along `axis`; ties send the gradient to the first maximal entry."""
    index = np.expand_dims(np.argmax(x.value, axis = axis), axis)

    def backward(grad):
        full = np.zeros_like(x.value)
        np.put_along_axis(full, index, np.expand_dims(grad, axis), axis = axis)
        x.accumulate(full)

    return _result(np.take_along_axis(x.value, index, axis = axis).squeeze(axis), (x,), backward)


def dropout(x: DiffTensor, p: float, rng: np.random.Generator, training: bool) -> DiffTensor:
    """Inverted dropout; the identity outside training or when `p` is 0."""
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)

    def backward(grad):
        x.accumulate(grad * mask)

    return _result(x.value * mask, (x,), backward)


def batch_norm(
    x: DiffTensor,
    gamma: DiffTensor,
    beta: DiffTensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> DiffTensor:
    """Normalize channel axis 1 over every other axis.

    Training mode uses batch statistics and updates the running buffers in place (the running
    variance uses the unbiased estimate); evaluation mode uses the running buffers.
    """
    axes = tuple(a for a in range(x.value.ndim) if a != 1)
    shape = [1] * x.value.ndim
    shape[1] = x.shape[1]
    count = x.value.size // x.shape[1]
    if training:
        mu = x.value.mean(axis = axes)
        var = x.value.var(axis = axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / max(count - 1, 1)
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mu.reshape(shape)) * inv_std.reshape(shape)
    g = gamma.value.reshape(shape)

    def backward(grad):
        gamma.accumulate(np.sum(grad * xhat, axis = axes))
        beta.accumulate(np.sum(grad, axis = axes))
        if not x.requires_grad:
            return
        dxhat = grad * g
        if training:
            total = np.sum(dxhat, axis = axes).reshape(shape)
            projected = np.sum(dxhat * xhat, axis = axes).reshape(shape)
            x.accumulate(inv_std.reshape(shape) * (dxhat - total / count - xhat * projected / count))
        else:
            x.accumulate(dxhat * inv_std.reshape(shape))

    return _result(g * xhat + beta.value.reshape(shape), (x, gamma, beta), backward)


def temporal_conv(x: DiffTensor, weight: DiffTensor, bias: Optional[DiffTensor], stride: int = 1) -> DiffTensor:
    """Convolve `(N, C, T, V, M)` along `T` with an `(O, C, K)` kernel, zero-padded by `(K - 1) // 2`.

    The output has `(T - 1) // stride + 1` frames for odd `K`.
    """
    if x.value.ndim != 5 or weight.value.ndim != 3 or weight.shape[1] != x.shape[1]:
        raise ShapeMismatch(f"Cannot convolve input {x.shape} with kernel {weight.shape}.")
    if stride < 1:
        raise ShapeMismatch(f"stride must be positive, got {stride}.")
    N, C, T, V, M = x.shape
    O, _, K = weight.shape
    pad = (K - 1) // 2
    T_out = (T + 2 * pad - K) // stride + 1
    if T_out < 1:
        raise ShapeMismatch(f"{T} frames are too few for a kernel of {K}.")
    padded = np.pad(x.value, ((0, 0), (0, 0), (pad, pad), (0, 0), (0, 0)))
    span = stride * (T_out - 1) + 1

    out = np.zeros((N, O, T_out, V, M))
    for k in range(K):
        out += np.einsum("oc,nctvm->notvm", weight.value[:, :, k], padded[:, :, k:k + span:stride], optimize = True)
    if bias is not None:
        out += bias.value[None, :, None, None, None]

    def backward(grad):
        if weight.requires_grad:
            dw = np.empty_like(weight.value)
            for k in range(K):
                dw[:, :, k] = np.einsum("notvm,nctvm->oc", grad, padded[:, :, k:k + span:stride], optimize = True)
            weight.accumulate(dw)
        if bias is not None:
            bias.accumulate(grad.sum(axis = (0, 2, 3, 4)))
        if x.requires_grad:
            dpadded = np.zeros_like(padded)
            for k in range(K):
                dpadded[:, :, k:k + span:stride] += np.einsum(
                    "oc,notvm->nctvm", weight.value[:, :, k], grad, optimize = True
                )
            x.accumulate(dpadded[:, :, pad:pad + T])

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward)


def cross_entropy(logits: DiffTensor, labels: Sequence[int]) -> DiffTensor:
    """Mean softmax cross-entropy of `(N, K)` logits, stabilized by subtracting the row maximum.

    ### Raises:
    - `LabelOutOfRange`: A label is outside `[0, K)`.
    """
    if logits.value.ndim == 1:
        logits = reshape(logits, (1, -1))
    labels = np.atleast_1d(np.asarray(labels, dtype = np.int64))
    N, K = logits.shape
    if labels.shape != (N,):
        raise ShapeMismatch(f"{labels.shape[0]} labels for {N} rows of logits.")
    if np.any(labels < 0) or np.any(labels >= K):
        raise LabelOutOfRange(f"Labels must lie in [0, {K}), got {labels.tolist()}.")
    shifted = logits.value - logits.value.max(axis = 1, keepdims = True)
    log_norm = np.log(np.exp(shifted).sum(axis = 1))
    rows = np.arange(N)
    loss = float(np.mean(log_norm - shifted[rows, labels]))

    def backward(grad):
        softmax = np.exp(shifted - log_norm[:, None])
        softmax[rows, labels] -= 1.0
        logits.accumulate(float(grad) * softmax / N)

    return _result(np.asarray(loss), (logits,), backward)


def reshape(x: DiffTensor, shape: Tuple[int, ...]) -> DiffTensor:
    def backward(grad):
        x.accumulate(grad.reshape(x.shape))

    return _result(x.value.reshape(shape), (x,), backward)
