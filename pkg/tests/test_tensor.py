import math

import numpy as np
import pytest

from spstgcn.enums import TensorRole
from spstgcn.errors import LabelOutOfRange, ShapeMismatch
from spstgcn.nn.tensor import (
    DiffTensor,
    add,
    batch_norm,
    constant,
    cross_entropy,
    dropout,
    einsum,
    max_over,
    mean,
    mul,
    relu,
    reshape,
    temporal_conv,
)


def leaf(value):
    return DiffTensor(np.asarray(value, dtype = float), TensorRole.PARAMETER)


def test_roles_and_requires_grad():
    assert DiffTensor([1.0]).requires_grad is False
    assert leaf([1.0]).requires_grad is True
    assert constant(np.zeros(2)).requires_grad is False
    out = add(constant([1.0]), constant([2.0]))
    assert out.requires_grad is False


def test_add_unbroadcasts():
    a, b = leaf(np.ones((2, 3))), leaf(np.ones(3))
    add(a, b).backward()
    np.testing.assert_array_equal(a.grad, np.ones((2, 3)))
    np.testing.assert_array_equal(b.grad, np.full(3, 2.0))


def test_mul_and_reuse_accumulate():
    x = leaf([3.0, -2.0])
    (x * x).backward()
    np.testing.assert_array_equal(x.grad, [6.0, -4.0])


def test_backward_seed_shape():
    x = leaf([1.0, 2.0])
    with pytest.raises(ShapeMismatch):
        mul(x, 2.0).backward(np.ones(3))


def test_einsum_matmul_gradient():
    rng = np.random.default_rng(0)
    A, B = leaf(rng.normal(size = (2, 3))), leaf(rng.normal(size = (3, 4)))
    seed = rng.normal(size = (2, 4))
    out = einsum("ij,jk->ik", A, B)
    np.testing.assert_allclose(out.value, A.value @ B.value)
    out.backward(seed)
    np.testing.assert_allclose(A.grad, seed @ B.value.T)
    np.testing.assert_allclose(B.grad, A.value.T @ seed)


def test_einsum_index_summed_inside_one_operand():
    a, b = leaf(np.arange(6.0).reshape(2, 3)), leaf([1.0, 2.0])
    out = einsum("ij,k->k", a, b)
    np.testing.assert_allclose(out.value, [15.0, 30.0])
    out.backward(np.array([1.0, 1.0]))
    np.testing.assert_allclose(a.grad, np.full((2, 3), 3.0))
    np.testing.assert_allclose(b.grad, [15.0, 15.0])


@pytest.mark.parametrize("subscripts", ["ij,jk", "...i,ij->...j", "ii,ij->j", "ij->ij"])
def test_einsum_rejects_unsupported_subscripts(subscripts):
    with pytest.raises(ValueError):
        einsum(subscripts, np.ones((2, 2)), np.ones((2, 2)))


def test_relu_gradient():
    x = leaf([-1.0, 0.0, 2.0])
    out = relu(x)
    np.testing.assert_array_equal(out.value, [0.0, 0.0, 2.0])
    out.backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_mean_gradient():
    x = leaf(np.ones((2, 3, 4)))
    out = mean(x, (1, 2))
    assert out.shape == (2,)
    out.backward()
    np.testing.assert_allclose(x.grad, np.full((2, 3, 4), 1.0 / 12))


def test_max_over_ties_go_to_first():
    x = leaf([[1.0, 3.0, 3.0], [2.0, 0.0, 1.0]])
    out = max_over(x, 1)
    np.testing.assert_array_equal(out.value, [3.0, 2.0])
    out.backward()
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])


def test_dropout():
    x = leaf(np.ones((200, 50)))
    rng = np.random.default_rng(0)
    assert dropout(x, 0.5, rng, training = False) is x
    assert dropout(x, 0.0, rng, training = True) is x
    out = dropout(x, 0.5, rng, training = True)
    assert set(np.unique(out.value)) <= {0.0, 2.0}
    assert abs(out.value.mean() - 1.0) < 0.05
    out.backward()
    np.testing.assert_array_equal(x.grad, out.value)


def test_batch_norm_training_statistics():
    rng = np.random.default_rng(1)
    x = leaf(rng.normal(2.0, 3.0, size = (4, 2, 5, 3, 1)))
    gamma, beta = leaf(np.ones(2)), leaf(np.zeros(2))
    running_mean, running_var = np.zeros(2), np.ones(2)
    out = batch_norm(x, gamma, beta, running_mean, running_var, True, 0.1, 1e-5)
    axes = (0, 2, 3, 4)
    np.testing.assert_allclose(out.value.mean(axis = axes), 0.0, atol = 1e-12)
    np.testing.assert_allclose(out.value.var(axis = axes), 1.0, rtol = 1e-4)
    count = 4 * 5 * 3
    np.testing.assert_allclose(running_mean, 0.1 * x.value.mean(axis = axes))
    np.testing.assert_allclose(running_var, 0.9 + 0.1 * x.value.var(axis = axes) * count / (count - 1))


def test_batch_norm_evaluation_uses_buffers():
    x = leaf(np.full((1, 2, 1, 1, 1), 3.0))
    gamma, beta = leaf([2.0, 1.0]), leaf([0.5, 0.0])
    out = batch_norm(x, gamma, beta, np.array([1.0, 3.0]), np.array([4.0, 1.0]), False, 0.1, 0.0)
    np.testing.assert_allclose(out.value.ravel(), [2.0 * (3.0 - 1.0) / 2.0 + 0.5, 0.0])


def test_temporal_conv_shape_errors():
    with pytest.raises(ShapeMismatch):
        temporal_conv(constant(np.zeros((1, 2, 4, 3, 1))), leaf(np.zeros((2, 3, 3))), None)
    with pytest.raises(ShapeMismatch):
        temporal_conv(constant(np.zeros((1, 2, 4, 3, 1))), leaf(np.zeros((2, 2, 3))), None, stride = 0)


def test_cross_entropy_uniform():
    logits = leaf(np.zeros((2, 4)))
    loss = cross_entropy(logits, [0, 3])
    assert float(loss.value) == pytest.approx(math.log(4))
    loss.backward()
    expected = np.full((2, 4), 0.25)
    expected[0, 0] -= 1.0
    expected[1, 3] -= 1.0
    np.testing.assert_allclose(logits.grad, expected / 2)


def test_cross_entropy_is_stable():
    loss = cross_entropy(leaf([[1000.0, 0.0]]), [0])
    assert np.isfinite(loss.value)
    assert float(loss.value) == pytest.approx(0.0, abs = 1e-12)


def test_cross_entropy_single_row_and_errors():
    assert float(cross_entropy(leaf([0.0, 0.0]), 1).value) == pytest.approx(math.log(2))
    with pytest.raises(LabelOutOfRange):
        cross_entropy(leaf(np.zeros((1, 3))), [3])
    with pytest.raises(LabelOutOfRange):
        cross_entropy(leaf(np.zeros((1, 3))), [-1])
    with pytest.raises(ShapeMismatch):
        cross_entropy(leaf(np.zeros((2, 3))), [0])


def test_reshape_gradient():
    x = leaf(np.arange(6.0))
    out = reshape(x, (2, 3))
    out.backward(np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(x.grad, np.arange(6.0))
