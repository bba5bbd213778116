import numpy as np
import pytest

from spstgcn.errors import ShapeMismatch
from spstgcn.graph import make_graph, ntu_graph, spatial_adjacency
from spstgcn.nn.gradcheck import tiny_graph
from spstgcn.nn.layers import (
    BatchNorm,
    GcnBlock,
    InitialBlock,
    SpStGcnLayerParams,
    TemporalConv,
    spatial_gcn_forward,
    spst_gcn_forward,
    structural_gcn_forward,
)
from spstgcn.nn.tensor import constant, temporal_conv


@pytest.fixture
def adj():
    return spatial_adjacency(tiny_graph())


@pytest.fixture
def layer(adj):
    rng = np.random.default_rng(3)
    params = SpStGcnLayerParams(2, 3, adj.count, 4, True, rng)
    for B in params.B:
        B.value[...] = 0.1 * rng.standard_normal(B.shape)
    return params


@pytest.fixture
def batch():
    rng = np.random.default_rng(4)
    return rng.standard_normal((2, 2, 3, 4, 2)), rng.standard_normal((2, 4, 4))


def naive_spatial(f, adj, p):
    N, C, T, V, M = f.shape
    out = np.zeros((N, p.c_out, T, V, M))
    for j in range(adj.count):
        graph = adj.partitions[j] + p.B[j].value
        W = p.W[j].value
        for n in range(N):
            for o in range(p.c_out):
                for t in range(T):
                    for w in range(V):
                        for m in range(M):
                            out[n, o, t, w, m] += sum(
                                W[o, c] * f[n, c, t, v, m] * graph[v, w] for c in range(C) for v in range(V)
                            )
    return out


def naive_structural(f, As, p):
    N, C, T, V, M = f.shape
    out = np.zeros((N, p.c_out, T, V, M))
    Mw = p.M.value
    for n in range(N):
        for o in range(p.c_out):
            for t in range(T):
                for w in range(V):
                    for m in range(M):
                        out[n, o, t, w, m] = sum(
                            Mw[o, c] * f[n, c, t, v, m] * As[n, v, w] for c in range(C) for v in range(V)
                        )
    return out


def naive_temporal_conv(x, w, b, stride):
    N, C, T, V, M = x.shape
    O, _, K = w.shape
    pad = (K - 1) // 2
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (0, 0), (0, 0)))
    T_out = (T + 2 * pad - K) // stride + 1
    out = np.zeros((N, O, T_out, V, M))
    for n in range(N):
        for o in range(O):
            for t in range(T_out):
                for v in range(V):
                    for m in range(M):
                        total = b[o]
                        for c in range(C):
                            for k in range(K):
                                total += w[o, c, k] * padded[n, c, t * stride + k, v, m]
                        out[n, o, t, v, m] = total
    return out


def naive_batch_norm_eval(x, bn):
    mean = bn._buffers["running_mean"][None, :, None, None, None]
    var = bn._buffers["running_var"][None, :, None, None, None]
    gamma = bn.gamma.value[None, :, None, None, None]
    beta = bn.beta.value[None, :, None, None, None]
    return (x - mean) / np.sqrt(var + bn.eps) * gamma + beta


def random_tree(rng, V):
    """A random tree over `V` joints centered on joint 0, its other leaves as edge nodes."""
    edges = [(v, int(rng.integers(0, v))) for v in range(1, V)]
    degree = np.bincount(np.array(edges).ravel(), minlength = V)
    leaves = [v for v in range(1, V) if degree[v] == 1]
    return make_graph(V, edges, center_joint = 0, edge_nodes = leaves)


def generate_random_layer_tests():
    rng = np.random.default_rng(17)
    cases = []
    for _ in range(50):
        V = int(rng.integers(2, 6))
        adj = spatial_adjacency(random_tree(rng, V), max_hop = int(rng.integers(0, 3)))
        N, C, T, M = (int(size) for size in rng.integers(1, [3, 4, 4, 3]))
        params = SpStGcnLayerParams(C, int(rng.integers(1, 4)), adj.count, V, True, rng)
        for B in params.B:
            B.value[...] = 0.1 * rng.standard_normal(B.shape)
        cases.append((rng.standard_normal((N, C, T, V, M)), rng.standard_normal((N, V, V)), adj, params))
    return cases


@pytest.mark.parametrize("f, As, adj, params", generate_random_layer_tests())
def test_random_shapes_match_loops(f, As, adj, params):
    spatial, structural = naive_spatial(f, adj, params), naive_structural(f, As, params)
    np.testing.assert_allclose(spatial_gcn_forward(constant(f), adj, params).value, spatial, atol = 1e-12)
    np.testing.assert_allclose(structural_gcn_forward(constant(f), As, params).value, structural, atol = 1e-12)
    np.testing.assert_allclose(spst_gcn_forward(constant(f), adj, As, params).value, spatial + structural, atol = 1e-12)


def generate_random_temporal_tests():
    rng = np.random.default_rng(19)
    cases = []
    for _ in range(50):
        K = int(rng.choice([1, 3, 5]))
        T, stride = int(rng.integers(1, 8)), int(rng.integers(1, 4))
        N, C, V, M, O = (int(size) for size in rng.integers(1, [3, 4, 5, 3, 4]))
        cases.append((rng.standard_normal((N, C, T, V, M)), rng.standard_normal((O, C, K)), rng.standard_normal(O), stride))
    return cases


@pytest.mark.parametrize("x, w, b, stride", generate_random_temporal_tests())
def test_temporal_conv_matches_loops(x, w, b, stride):
    out = temporal_conv(constant(x), constant(w), constant(b), stride)
    assert out.shape[2] == (x.shape[2] - 1) // stride + 1
    np.testing.assert_allclose(out.value, naive_temporal_conv(x, w, b, stride), atol = 1e-12)


def generate_block_tests():
    rng = np.random.default_rng(23)
    cases = []
    for c_in, c_out, stride, kernel_size in ((2, 2, 1, 3), (2, 3, 1, 3), (3, 3, 2, 3), (2, 3, 2, 5), (1, 2, 1, 1), (3, 2, 3, 3)):
        V = int(rng.integers(2, 6))
        adj = spatial_adjacency(random_tree(rng, V))
        block = GcnBlock(c_in, c_out, stride, kernel_size, adj, True, rng, eps = 1e-3)
        for B in block.gcn.params.B:
            B.value[...] = 0.1 * rng.standard_normal(B.shape)
        block.bn._buffers["running_mean"][...] = rng.standard_normal(c_out)
        block.bn._buffers["running_var"][...] = rng.uniform(0.5, 2.0, c_out)
        block.bn.gamma.value[...] = rng.uniform(0.5, 1.5, c_out)
        block.bn.beta.value[...] = rng.standard_normal(c_out)
        block.tcn.bias.value[...] = rng.standard_normal(c_out)
        if block.residual is not None:
            block.residual.bias.value[...] = rng.standard_normal(c_out)
        block.eval()
        T = int(rng.integers(1, 7))
        cases.append((rng.standard_normal((2, c_in, T, V, 2)), rng.standard_normal((2, V, V)), block))
    return cases


@pytest.mark.parametrize("f, As, block", generate_block_tests())
def test_gcn_block_matches_loops(f, As, block):
    params = block.gcn.params
    gcn = naive_spatial(f, block.gcn.adj, params) + naive_structural(f, As, params)
    hidden = np.maximum(naive_batch_norm_eval(gcn, block.bn), 0.0)
    main = naive_temporal_conv(hidden, block.tcn.weight.value, block.tcn.bias.value, block.tcn.stride)
    if block.residual is None:
        shortcut = f
    else:
        shortcut = naive_temporal_conv(f, block.residual.weight.value, block.residual.bias.value, block.residual.stride)
    np.testing.assert_allclose(block(constant(f), As).value, main + shortcut, atol = 1e-12)


def test_layer_parameters(layer, adj):
    assert adj.count == 3
    names = set(layer.parameters())
    assert names == {"W_0", "W_1", "W_2", "B_0", "B_1", "B_2", "M_1"}
    assert layer.W[0].shape == (3, 2)
    assert layer.M.shape == (3, 2)
    assert layer.B[0].shape == (4, 4)
    bound = 1.0 / np.sqrt(2 * 3)
    assert all(np.all(np.abs(W.value) <= bound) for W in layer.W)


def test_spatial_matches_loops(layer, adj, batch):
    f, _ = batch
    out = spatial_gcn_forward(constant(f), adj, layer)
    np.testing.assert_allclose(out.value, naive_spatial(f, adj, layer), atol = 1e-12)


def test_structural_matches_loops(layer, batch):
    f, As = batch
    out = structural_gcn_forward(constant(f), As, layer)
    np.testing.assert_allclose(out.value, naive_structural(f, As, layer), atol = 1e-12)


def test_spst_is_the_sum(layer, adj, batch):
    f, As = batch
    out = spst_gcn_forward(constant(f), adj, As, layer)
    expected = naive_spatial(f, adj, layer) + naive_structural(f, As, layer)
    np.testing.assert_allclose(out.value, expected, atol = 1e-12)


def test_spst_without_structural_matrix(layer, adj, batch):
    f, _ = batch
    np.testing.assert_array_equal(
        spst_gcn_forward(constant(f), adj, None, layer).value,
        spatial_gcn_forward(constant(f), adj, layer).value,
    )


def test_layer_without_structural_branch(adj, batch):
    f, As = batch
    params = SpStGcnLayerParams(2, 3, adj.count, 4, False, np.random.default_rng(0))
    assert params.M is None
    assert "M_1" not in params.parameters()
    np.testing.assert_array_equal(
        spst_gcn_forward(constant(f), adj, As, params).value,
        spatial_gcn_forward(constant(f), adj, params).value,
    )
    with pytest.raises(ShapeMismatch):
        structural_gcn_forward(constant(f), As, params)


def generate_shape_mismatch_tests():
    rng = np.random.default_rng(0)
    return [
        # wrong channel count
        (rng.standard_normal((2, 3, 3, 4, 1)), rng.standard_normal((2, 4, 4))),
        # wrong joint count
        (rng.standard_normal((2, 2, 3, 5, 1)), rng.standard_normal((2, 5, 5))),
        # one structural matrix for two samples
        (rng.standard_normal((2, 2, 3, 4, 1)), rng.standard_normal((1, 4, 4))),
        # missing body axis
        (rng.standard_normal((2, 2, 3, 4)), rng.standard_normal((2, 4, 4))),
    ]


@pytest.mark.parametrize("f, As", generate_shape_mismatch_tests())
def test_shape_mismatch(layer, adj, f, As):
    with pytest.raises(ShapeMismatch):
        spst_gcn_forward(constant(f), adj, As, layer)


def test_partition_count_mismatch(layer):
    with pytest.raises(ShapeMismatch):
        spatial_gcn_forward(constant(np.zeros((1, 2, 3, 4, 1))), spatial_adjacency(tiny_graph(), max_hop = 1), layer)


def test_batch_norm_module_buffers():
    bn = BatchNorm(3)
    assert set(bn.parameters()) == {"gamma", "beta"}
    assert set(dict(bn.named_buffers())) == {"running_mean", "running_var"}
    bn(constant(np.random.default_rng(0).normal(5.0, 1.0, (4, 3, 2, 2, 1))))
    assert np.all(dict(bn.named_buffers())["running_mean"] > 0)


def test_temporal_conv_module():
    conv = TemporalConv(2, 4, 5, 2, np.random.default_rng(0))
    assert conv.weight.shape == (4, 2, 5)
    out = conv(constant(np.zeros((1, 2, 9, 3, 1))))
    assert out.shape == (1, 4, 5, 3, 1)


def test_gcn_block_residual(adj):
    rng = np.random.default_rng(0)
    same = GcnBlock(3, 3, 1, 3, adj, True, rng)
    assert same.residual is None
    wider = GcnBlock(3, 4, 1, 3, adj, True, rng)
    strided = GcnBlock(3, 3, 2, 3, adj, True, rng)
    assert wider.residual.weight.shape == (4, 3, 1)
    assert strided.residual.weight.shape == (3, 3, 1)
    x = constant(np.random.default_rng(1).standard_normal((2, 3, 6, 4, 1)))
    As = np.tile(np.eye(4), (2, 1, 1))
    assert same(x, As).shape == (2, 3, 6, 4, 1)
    assert wider(x, As).shape == (2, 4, 6, 4, 1)
    assert strided(x, As).shape == (2, 3, 3, 4, 1)


def test_identity_residual_is_added(adj):
    block = GcnBlock(3, 3, 1, 3, adj, False, np.random.default_rng(0))
    block.tcn.weight.value[...] = 0.0
    x = constant(np.random.default_rng(1).standard_normal((2, 3, 5, 4, 1)))
    np.testing.assert_allclose(block(x, None).value, x.value)


def test_module_naming_and_modes():
    g = ntu_graph()
    adj = spatial_adjacency(g)
    block = InitialBlock(6, 8, adj, True, np.random.default_rng(0), 0.1, 1e-5)
    names = set(block.parameters())
    assert "layer.gcn.W_0" in names
    assert "input_bn.gamma" in names
    assert "bn.beta" in names
    buffers = dict(block.named_buffers())
    assert set(buffers) == {"input_bn.running_mean", "input_bn.running_var", "bn.running_mean", "bn.running_var"}
    block.eval()
    assert not block.bn.training and not block.gcn.params.training
    block.train()
    assert block.input_bn.training


def test_zero_grad(layer, adj, batch):
    f, As = batch
    out = spst_gcn_forward(constant(f), adj, As, layer)
    out.backward()
    assert np.any(layer.M.grad)
    layer.zero_grad()
    assert not np.any(layer.M.grad)
