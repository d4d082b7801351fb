import numpy as np
import pytest
from hypothesis import given, strategies as st

from graphwcs import gnn
from graphwcs.proptest import random_architecture

ACT = {"relu": lambda x: np.maximum(x, 0.0), "identity": lambda x: x, "sigmoid": lambda x: 1 / (1 + np.exp(-x))}


def dense_oracle(S, z, params, arch):
    """Forward pass that forms every matrix power explicitly."""
    y = z
    for l in range(arch.n_layers):
        out = sum(np.linalg.matrix_power(S, k) @ y @ params[l][k] for k in range(arch.taps[l]))
        y = ACT[arch.nonlinearities[l]](out)
    return y


def test_graph_conv_single_tap_ignores_shift(rng):
    y = rng.standard_normal((4, 2))
    taps = rng.standard_normal((1, 2, 3))
    for S in (np.eye(4), rng.standard_normal((4, 4))):
        np.testing.assert_allclose(gnn.graph_conv(S, y, taps), y @ taps[0], rtol=1e-15)


def test_graph_conv_identity_shift_collapses_taps(rng):
    y = rng.standard_normal((5, 1))
    taps = rng.standard_normal((4, 1, 1))
    np.testing.assert_allclose(gnn.graph_conv(np.eye(5), y, taps), taps.sum() * y, rtol=1e-14)


def test_graph_conv_two_node_swap():
    S = np.array([[0.0, 1.0], [1.0, 0.0]])
    taps = np.array([[[1.0]], [[2.0]]])
    np.testing.assert_array_equal(gnn.graph_conv(S, np.array([[1.0], [0.0]]), taps), [[1.0], [2.0]])


def test_graph_conv_shape_errors(rng):
    with pytest.raises(ValueError):
        gnn.graph_conv(np.eye(3), np.ones((4, 1)), np.ones((2, 1, 1)))
    with pytest.raises(ValueError):
        gnn.graph_conv(np.eye(3), np.ones((3, 2)), np.ones((2, 1, 1)))


def test_regnn_zero_taps_give_zero(rng):
    arch = gnn.Architecture.uniform(3, 4, 6)
    out = gnn.regnn_forward(rng.random((7, 7)), rng.random((7, 1)), gnn.zeros_params(arch), arch)
    np.testing.assert_array_equal(out, np.zeros((7, 1)))


def test_regnn_single_linear_layer(rng):
    arch = gnn.Architecture((1,), (2, 3), ("identity",))
    params = gnn.init_params(arch, rng)
    y = rng.standard_normal((5, 2))
    np.testing.assert_allclose(gnn.regnn_forward(rng.random((5, 5)), y, params, arch), y @ params[0][0], rtol=1e-15)


def test_regnn_matches_dense_oracle_default_arch(rng):
    arch = gnn.Architecture.uniform(3, 5, 10)
    params = gnn.init_params(arch, rng)
    S, z = rng.random((4, 4)), rng.random((4, 1))
    np.testing.assert_allclose(gnn.regnn_forward(S, z, params, arch), dense_oracle(S, z, params, arch), rtol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_regnn_matches_dense_oracle_random(seed):
    rng = np.random.default_rng(seed)
    arch = random_architecture(rng)
    params = gnn.init_params(arch, rng)
    m = int(rng.integers(1, 9))
    S = gnn.normalize_gso(rng.exponential(size=(m, m)))
    z = rng.standard_normal((m, arch.features[0]))
    np.testing.assert_allclose(gnn.regnn_forward(S, z, params, arch), dense_oracle(S, z, params, arch),
                               rtol=1e-12, atol=1e-13)


@given(st.integers(0, 2**32 - 1))
def test_equivariance_property(seed):
    rng = np.random.default_rng(seed)
    arch = random_architecture(rng)
    params = gnn.init_params(arch, rng)
    m = int(rng.integers(1, 21))
    S = rng.exponential(size=(m, m))
    z = rng.standard_normal((m, arch.features[0]))
    perm = rng.permutation(m)
    Sp, zp = gnn.permute(perm, S, z)
    out = gnn.regnn_forward(S, z, params, arch)
    np.testing.assert_allclose(gnn.regnn_forward(Sp, zp, params, arch), out[perm], rtol=1e-9,
                               atol=1e-9 * max(1.0, np.abs(out).max()))


def test_batched_forward_matches_loop(rng):
    arch = gnn.Architecture.uniform(2, 3, 4)
    params = gnn.init_params(arch, rng)
    S, z = rng.random((5, 6, 6)), rng.random((5, 6, 1))
    batched = gnn.regnn_forward(S, z, params, arch)
    for b in range(5):
        np.testing.assert_allclose(batched[b], gnn.regnn_forward(S[b], z[b], params, arch), rtol=1e-14)


def test_param_counts():
    assert gnn.param_count_gnn(gnn.Architecture((1,), (1, 1), ("identity",))) == 1
    assert gnn.param_count_gnn(gnn.Architecture.uniform(3, 5, 10)) == 600
    assert gnn.param_count_nn(1, 1, [1]) == 2
    assert gnn.param_count_nn(30, 1, [64, 64]) == 30 * 31 * 64 + 64 * 64 == 63616
    with pytest.raises(ValueError):
        gnn.param_count_nn(0, 1, [3])


def test_param_count_nn_quadratic_in_m():
    first = lambda m: gnn.param_count_nn(m, 1, [8]) # noqa: E731
    assert 3.5 < first(200) / first(100) < 4.0


def test_flatten_roundtrip(rng):
    arch = random_architecture(rng)
    params = gnn.init_params(arch, rng)
    flat = gnn.flatten(params)
    assert flat.size == gnn.param_count_gnn(arch)
    for a, b in zip(gnn.unflatten(flat, arch), params):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        gnn.unflatten(flat[:-1], arch)


def test_permute_examples(rng):
    S, z = rng.random((3, 3)), rng.random((3, 2))
    Sp, zp = gnn.permute(np.arange(3), S, z)
    np.testing.assert_array_equal(Sp, S)
    np.testing.assert_array_equal(zp, z)
    S2 = np.array([[1.0, 2.0], [3.0, 4.0]])
    Ss, _ = gnn.permute([1, 0], S2, np.zeros((2, 1)))
    np.testing.assert_array_equal(Ss, [[4.0, 3.0], [2.0, 1.0]])
    perm = rng.permutation(3)
    back = gnn.permute(gnn.inverse_permutation(perm), *gnn.permute(perm, S, z))
    np.testing.assert_array_equal(back[0], S)
    np.testing.assert_array_equal(back[1], z)
    with pytest.raises(ValueError):
        gnn.permute([0, 0, 1], S, z)


def test_normalize_gso_row_sums(rng):
    H = rng.exponential(size=(4, 6, 6))
    S = gnn.normalize_gso(H)
    np.testing.assert_allclose(S.sum(axis=-1).max(axis=-1), 1.0, rtol=1e-15)
    np.testing.assert_array_equal(gnn.normalize_gso(np.zeros((3, 3))), np.zeros((3, 3)))


def test_checkpoint_format_and_roundtrip(rng):
    arch = gnn.Architecture((2, 3), (1, 4, 1), ("relu", "identity"))
    params = gnn.init_params(arch, rng)
    text = gnn.dump_regnn(arch, params, [0.25, -0.5])
    lines = text.split("\n")
    assert lines[0] == "REGNN v1"
    assert lines[1] == "2 1"
    assert lines[2] == "layer 1 2 4 relu"
    assert len(lines[3].split()) == 2 * 1 * 4
    assert lines[4] == "layer 2 3 1 identity"
    assert lines[6] == "head 2"
    assert "\r" not in text
    arch2, params2, head = gnn.load_regnn(text)
    assert arch2 == arch
    for a, b in zip(params2, params):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(head, [0.25, -0.5])
    assert gnn.dump_regnn(arch2, params2, head) == text


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        gnn.load_regnn("nonsense")
    arch = gnn.Architecture((1,), (1, 1), ("identity",))
    text = gnn.dump_regnn(arch, [np.ones((1, 1, 1))]).replace("layer 1 1 1", "layer 1 2 1")
    with pytest.raises(ValueError):
        gnn.load_regnn(text)


def test_architecture_validation():
    with pytest.raises(ValueError):
        gnn.Architecture((1, 2), (1, 1), ("relu",))
    with pytest.raises(ValueError):
        gnn.Architecture((0,), (1, 1), ("relu",))
    with pytest.raises(ValueError):
        gnn.Architecture((1,), (1, 1), ("tanh",))
