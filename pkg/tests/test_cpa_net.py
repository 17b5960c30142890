import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magnet.cpa_net import (
    Activation,
    CpaNetwork,
    Layer,
    activation_codes,
    activation_pattern,
    forward,
    jacobian_fd,
    line_regions,
    region_affine,
    region_jacobians,
)
from magnet.errors import InputError
from magnet.model_io import RandomCpa, make_toy

from conftest import dense, leaky_1d, linear_net


def product_form(net, z):
    """A and b as products of diag(slope) W read off layer by layer (independent oracle)."""
    h = np.asarray(z, dtype=float)
    slopes = []
    for layer in net.layers:
        pre = layer.weight @ h + layer.bias
        slopes.append(np.where(pre >= 0, 1.0, layer.activation.alpha))
        h = np.where(pre >= 0, pre, layer.activation.alpha * pre)
    L = len(net.layers)
    A = np.eye(net.latent_dim)
    for s, layer in zip(slopes, net.layers):
        A = np.diag(s) @ layer.weight @ A
    b = np.zeros(net.output_dim)
    for l in range(L):
        # b = sum_l (prod_{i>l} diag(s_i) W_i) diag(s_l) b_l
        term = slopes[l] * net.layers[l].bias
        for i in range(l + 1, L):
            term = slopes[i] * (net.layers[i].weight @ term)
        b = b + term
    return A, b


# ---------------------------------------------------------------- construction


def test_activation_alpha_must_match_kind():
    with pytest.raises(InputError):
        Activation("relu", 0.3)
    with pytest.raises(InputError):
        Activation("abs", 1.0)
    with pytest.raises(InputError):
        Activation.leaky_relu(0.0)
    assert Activation("identity", 1).alpha == 1.0


def test_network_rejects_bad_chain_and_shapes():
    with pytest.raises(InputError):
        CpaNetwork((dense(np.ones((3, 2)), act=Activation.relu()), dense(np.ones((2, 4)))))
    with pytest.raises(InputError):
        Layer(np.ones((2, 2)), np.zeros(3), Activation.relu())
    with pytest.raises(InputError):
        Layer([[np.nan]], [0.0], Activation.identity())


def test_network_requires_identity_output_and_embedding():
    with pytest.raises(InputError):
        CpaNetwork((dense([[1.0]], act=Activation.relu()),))
    with pytest.raises(InputError):
        linear_net(np.ones((1, 2)))  # D < S


def test_weights_are_read_only():
    net = linear_net(np.eye(2))
    with pytest.raises(ValueError):
        net.layers[0].weight[0, 0] = 5.0


# ---------------------------------------------------------------- forward


def test_forward_identity_layer():
    np.testing.assert_array_equal(forward(linear_net(np.eye(2)), [0.3, -0.7]), [0.3, -0.7])


def test_forward_leaky_negative_side():
    np.testing.assert_array_equal(forward(leaky_1d(0.5), [-1.0]), [-0.5])


def test_forward_batch_matches_rows(rng):
    net = make_toy(RandomCpa(3, 5, (8, 8), seed=1))
    Z = rng.normal(size=(20, 3))
    X = forward(net, Z)
    for z, x in zip(Z, X):
        np.testing.assert_allclose(forward(net, z), x, rtol=1e-14, atol=1e-15)


def test_forward_dimension_mismatch():
    with pytest.raises(InputError):
        forward(linear_net(np.eye(2)), [1.0, 2.0, 3.0])
    with pytest.raises(InputError):
        forward(linear_net(np.eye(2)), [np.inf, 0.0])


def test_forward_equals_region_affine_on_random_relu_net(rng):
    net = make_toy(RandomCpa(2, 4, (16, 16), seed=3))
    for z in rng.uniform(-1, 1, size=(50, 2)):
        ra = region_affine(net, z)
        x = forward(net, z)
        np.testing.assert_allclose(ra(z), x, rtol=1e-9, atol=1e-12)


# ---------------------------------------------------------------- patterns


def test_pattern_bits_from_preactivation_sign():
    net = CpaNetwork((dense([[1.0], [1.0]], b=np.array([2.0, -3.0]), act=Activation.relu()), dense([[1.0, 1.0]])))
    pat = activation_pattern(net, [0.0])
    np.testing.assert_array_equal(pat.flat(), [True, False])
    assert pat.n_bits == 2


def test_pattern_tie_goes_to_slope_one():
    pat = activation_pattern(leaky_1d(0.5), [0.0])
    np.testing.assert_array_equal(pat.flat(), [True])
    ra = region_affine(leaky_1d(0.5), [0.0])
    assert ra.A[0, 0] == 1.0


def test_identity_hidden_layer_gives_all_ones():
    net = CpaNetwork((dense(np.eye(3)[:, :2]), dense(np.eye(3))))
    pat = activation_pattern(net, [-4.0, -2.0])
    assert pat.flat().all() and pat.n_bits == 3


def test_equal_patterns_share_affine_map(rng):
    net = make_toy(RandomCpa(2, 3, (6,), seed=9))
    Z = rng.uniform(-1, 1, size=(400, 2))
    codes = activation_codes(net, Z)
    seen = {}
    for z, c in zip(Z, codes):
        seen.setdefault(c.tobytes(), []).append(z)
    for zs in seen.values():
        if len(zs) < 2:
            continue
        r0, r1 = region_affine(net, zs[0]), region_affine(net, zs[1])
        assert r0.pattern == r1.pattern and hash(r0.pattern) == hash(r1.pattern)
        np.testing.assert_allclose(r0.A, r1.A, rtol=1e-12)
        np.testing.assert_allclose(r0.b, r1.b, rtol=1e-12, atol=1e-15)


# ---------------------------------------------------------------- region_affine


def test_linear_net_affine_is_weight_product():
    W1 = np.array([[1.0, 2.0], [0.0, 1.0], [3.0, -1.0]])
    W2 = np.array([[1.0, 0.0, 1.0], [2.0, 1.0, 0.0]])
    b1, b2 = np.array([1.0, 0.0, -1.0]), np.array([0.5, 0.5])
    net = CpaNetwork((dense(W1, b1), dense(W2, b2)))
    ra = region_affine(net, [0.1, 0.2])
    np.testing.assert_allclose(ra.A, W2 @ W1)
    np.testing.assert_allclose(ra.b, W2 @ b1 + b2)


def test_leaky_region_affine_negative_side():
    ra = region_affine(leaky_1d(0.5), [-1.0])
    np.testing.assert_array_equal(ra.A, [[0.5]])
    np.testing.assert_array_equal(ra.b, [0.0])


@given(seed=st.integers(0, 10_000), S=st.integers(1, 3), extra=st.integers(0, 3), alpha=st.sampled_from([0.0, 0.2, -1.0]))
def test_region_affine_matches_product_form(seed, S, extra, alpha):
    net = make_toy(RandomCpa(S, S + extra, (5, 4), seed=seed, alpha=alpha))
    z = np.random.default_rng(seed).uniform(-1, 1, size=S)
    ra = region_affine(net, z)
    A, b = product_form(net, z)
    np.testing.assert_allclose(ra.A, A, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(ra.b, b, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(ra(z), forward(net, z), rtol=1e-9, atol=1e-12)


def test_batched_jacobians_match_single(rng):
    net = make_toy(RandomCpa(2, 5, (7, 7), seed=4, alpha=0.1))
    Z = rng.normal(size=(30, 2))
    A, b = region_jacobians(net, Z)
    for i, z in enumerate(Z):
        ra = region_affine(net, z)
        np.testing.assert_allclose(A[i], ra.A, rtol=1e-14, atol=1e-15)
        np.testing.assert_allclose(b[i], ra.b, rtol=1e-14, atol=1e-15)


def test_region_affine_agrees_with_finite_differences(rng):
    net = make_toy(RandomCpa(2, 3, (16, 16), seed=11))
    checked = 0
    for z in rng.uniform(-1, 1, size=(100, 2)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fd = jacobian_fd(net, z)
        if fd.contaminated:
            continue
        A = region_affine(net, z).A
        assert np.max(np.abs(A - fd.J)) <= 1e-5 * np.max(np.abs(A))
        checked += 1
    assert checked >= 90


# ---------------------------------------------------------------- jacobian_fd


def test_jacobian_fd_flags_boundary_crossing():
    with pytest.warns(RuntimeWarning):
        fd = jacobian_fd(leaky_1d(0.5), [0.0], h=1e-3)
    assert fd.contaminated_columns == (0,)
    np.testing.assert_allclose(fd.J, [[0.75]])


def test_jacobian_fd_rejects_bad_step():
    with pytest.raises(InputError):
        jacobian_fd(leaky_1d(), [0.3], h=0.0)


# ---------------------------------------------------------------- line_regions


def test_line_regions_two_region_toy():
    ts, regions = line_regions(leaky_1d(0.5), [-1.0], [1.0])
    np.testing.assert_allclose(ts, [0.0, 0.5, 1.0])
    assert [r.A[0, 0] for r in regions] == [0.5, 1.0]


def test_line_regions_matches_dense_scan():
    net = make_toy(RandomCpa(2, 2, (6,), seed=5))
    a, b = np.array([-1.0, -0.7]), np.array([1.0, 0.9])
    ts, regions = line_regions(net, a, b)
    t = np.linspace(0, 1, 20001)
    codes = activation_codes(net, a + t[:, None] * (b - a))
    changes = np.flatnonzero(np.any(codes[1:] != codes[:-1], axis=1))
    assert len(regions) == len(changes) + 1
    # every scanned change sits within one grid step of a reported breakpoint
    for c in changes:
        assert np.min(np.abs(ts - t[c])) <= 1.0 / 20000
    mids = 0.5 * (ts[:-1] + ts[1:])
    for m, r in zip(mids, regions):
        assert activation_pattern(net, a + m * (b - a)) == r.pattern
