import numpy as np
import pytest

from spstgcn.enums import TensorRole
from spstgcn.nn.gradcheck import (
    CHECKS,
    LAYER_TOLERANCE,
    check_batch_norm,
    check_gcn_block,
    check_loss,
    check_model,
    check_spst_layer,
    check_temporal_conv,
    grad_check,
    numeric_gradient,
    relative_error,
    run_grad_checks,
    tiny_graph,
)
from spstgcn.nn.tensor import DiffTensor, constant, mul


def test_numeric_gradient_of_a_square():
    x = DiffTensor(np.array([1.0, -2.0, 0.5]), TensorRole.INPUT, True)
    grad = numeric_gradient(lambda: float(np.sum(x.value ** 2)), x)
    np.testing.assert_allclose(grad, 2 * x.value, rtol = 1e-8)
    np.testing.assert_array_equal(x.value, [1.0, -2.0, 0.5])


def test_relative_error():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 1.0])) == pytest.approx(0.5)


def test_tiny_graph():
    g = tiny_graph()
    assert g.joint_count == 4
    assert g.center_joint == 1
    assert g.edge_nodes == (0, 2, 3)


def generate_check_tests():
    return [(check, seed) for check in (check_spst_layer, check_temporal_conv, check_batch_norm, check_gcn_block, check_model, check_loss) for seed in (0, 1)]


@pytest.mark.parametrize("check, seed", generate_check_tests())
def test_checks_pass(check, seed):
    report = check(seed)
    assert report.passed, f"{report.name}: {report.errors}"
    assert report.errors


def test_spst_layer_checks_every_tensor():
    report = check_spst_layer(0)
    assert {"f_in", "W_0", "W_1", "W_2", "B_0", "B_1", "B_2", "M_1"} == set(report.errors)


def test_broken_gradient_is_caught():
    x = DiffTensor(np.array([1.0, 2.0]), TensorRole.INPUT, True, "x")
    # Detaching the product hides the dependency from reverse mode.
    report = grad_check(lambda: mul(constant(x.value * 3.0), 1.0), {"x": x}, "detached", LAYER_TOLERANCE)
    assert not report.passed
    assert str(report) == "Failure"


def test_run_grad_checks_names_reports():
    reports = run_grad_checks(seeds = [3])
    assert len(reports) == len(CHECKS)
    assert all(r.name.endswith("[seed=3]") for r in reports)
    assert all(r.passed for r in reports)


@pytest.mark.slow
def test_ten_seeds():
    assert all(report.passed for report in run_grad_checks(range(10)))
