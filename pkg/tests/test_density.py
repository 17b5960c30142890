import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magnet.cpa_net import Activation, CpaNetwork, forward, region_jacobians
from magnet.density import (
    LatentPrior,
    density_at_latent,
    density_at_point,
    gaussian_log_density_closed_form,
    pushforward_entropy,
)
from magnet.errors import FoldingError, InputError, NotOnManifoldError, RankDeficientError
from magnet.geometry import log_volumes, volume_scalar
from magnet.model_io import TriangularSupport2D, TwoRegion1D, make_toy

from conftest import dense, leaky_1d, linear_net

SQRT3_NET = np.array([[1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])


def leaky_2d():
    """Invertible 2->2 net: leaky(W1 z + b1) then an affine read-out."""
    W1 = np.array([[1.0, 0.4], [-0.3, 0.8]])
    b1 = np.array([0.2, -0.1])
    W2 = np.array([[0.9, 0.2], [0.1, 1.1]])
    b2 = np.array([0.0, 0.3])
    return CpaNetwork((dense(W1, b1, Activation.leaky_relu(0.4)), dense(W2, b2))), (W1, b1, W2, b2)


def invert_leaky_2d(params, X):
    W1, b1, W2, b2 = params
    H = np.linalg.solve(W2, (X - b2).T).T
    P = np.where(H >= 0, H, H / 0.4)
    return np.linalg.solve(W1, (P - b1).T).T


# ---------------------------------------------------------------- priors


def test_prior_validation_and_entropy():
    with pytest.raises(InputError):
        LatentPrior("laplace", 1)
    with pytest.raises(InputError):
        LatentPrior.uniform_box([0.0], [0.0])
    assert LatentPrior.uniform_box([0, 0], [2, 3]).entropy() == pytest.approx(np.log(6.0))
    assert LatentPrior.standard_gaussian(3).entropy() == pytest.approx(1.5 * np.log(2 * np.pi * np.e))


def test_prior_densities_normalize():
    x = np.linspace(-12, 12, 200001)
    g = LatentPrior.standard_gaussian(1)
    assert np.trapezoid(np.exp(g.log_density(x[:, None])), x) == pytest.approx(1.0, abs=1e-10)
    u = LatentPrior.uniform_box([-1.0], [3.0])
    assert np.exp(u.log_density(np.array([[0.0]])))[0] == pytest.approx(0.25)
    assert u.log_density(np.array([[3.5]]))[0] == -np.inf


def test_prior_dim_mismatch():
    with pytest.raises(InputError):
        density_at_latent(leaky_1d(), LatentPrior.standard_gaussian(2), [0.0])


# ---------------------------------------------------------------- density_at_latent


def test_identity_gaussian_at_origin():
    for S in (1, 2, 5):
        v = density_at_latent(linear_net(np.eye(S)), LatentPrior.standard_gaussian(S), np.zeros(S))
        assert v.log_p == pytest.approx(-0.5 * S * np.log(2 * np.pi), abs=1e-14)


def test_uniform_density_on_sqrt3_net():
    # uniform prior on the unit square through A with det(A^T A) = 3
    net = linear_net(SQRT3_NET)
    prior = LatentPrior.uniform_box([0, 0], [1, 1])
    for z in ([0.2, 0.3], [0.9, 0.1], [0.5, 0.5]):
        assert density_at_latent(net, prior, z).p == pytest.approx(0.5773502691896258, rel=1e-14)


def test_gaussian_closed_form_matches_generic_path():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(4, 2))
    b = rng.normal(size=4)
    net = linear_net(A, b)
    prior = LatentPrior.standard_gaussian(2)
    for z in rng.normal(size=(20, 2)):
        x = forward(net, z)
        generic = density_at_latent(net, prior, z).log_p
        assert generic == pytest.approx(gaussian_log_density_closed_form(A, b, x), abs=1e-8)


def test_rank_deficient_density_raises():
    net = CpaNetwork((dense([[1.0]], act=Activation.relu()), dense([[1.0]])))
    with pytest.raises(RankDeficientError):
        density_at_latent(net, LatentPrior.standard_gaussian(1), [-1.0])


def test_reweighted_prior_makes_density_constant():
    # prior times sigma cancels the volume term: the same value in every region
    for net, lo, hi in [
        (make_toy(TwoRegion1D(0.5, 1.0)), [-1.0], [1.0]),
        (make_toy(TriangularSupport2D()), [0.0, 0.0], [1.0, 1.0]),
    ]:
        prior = LatentPrior.uniform_box(lo, hi)
        Z = np.random.default_rng(0).uniform(lo, hi, size=(200, len(lo)))
        vals = [density_at_latent(net, prior, z).log_p + volume_scalar(region_jacobians(net, z)[0]).log_sigma for z in Z]
        assert np.ptp(vals) <= 1e-10


# ---------------------------------------------------------------- density_at_point


def test_point_round_trip():
    net, _ = leaky_2d()
    prior = LatentPrior.standard_gaussian(2)
    z = np.array([-0.7, 0.4])
    v = density_at_point(net, prior, forward(net, z), [z])
    assert v.log_p == pytest.approx(density_at_latent(net, prior, z).log_p, abs=1e-12)
    np.testing.assert_allclose(v.latent_preimage, z, atol=1e-12)


def test_point_off_manifold():
    net = linear_net(SQRT3_NET)
    z = np.array([0.2, 0.3])
    normal = np.array([1.0, -1.0, -1.0]) / np.sqrt(3.0)  # orthogonal to the image plane
    with pytest.raises(NotOnManifoldError):
        density_at_point(net, LatentPrior.uniform_box([0, 0], [1, 1]), forward(net, z) + normal, [z])


def test_point_rejects_wrong_region_candidate():
    # x = (f(z), f(z)) with f leaky(0.5): x = (-0.5, -0.5) comes from z = -1
    net = CpaNetwork((dense([[1.0]], act=Activation.leaky_relu(0.5)), dense([[1.0], [1.0]])))
    prior = LatentPrior.standard_gaussian(1)
    x = np.array([-0.5, -0.5])
    # the positive-side map inverts x to z = -0.5, which is not in that region
    with pytest.raises(NotOnManifoldError):
        density_at_point(net, prior, x, [[0.3]])
    v = density_at_point(net, prior, x, [[0.3], [-0.9]])
    np.testing.assert_allclose(v.latent_preimage, [-1.0], atol=1e-14)
    assert v.log_p == pytest.approx(prior.log_density(np.array([-1.0])) - np.log(0.5 * np.sqrt(2.0)), abs=1e-14)


def test_point_detects_folding():
    net = CpaNetwork((dense([[1.0]], act=Activation.absolute()), dense([[1.0]])))
    with pytest.raises(FoldingError):
        density_at_point(net, LatentPrior.standard_gaussian(1), [0.5], [[0.4], [-0.6]])


def test_point_duplicate_candidates_same_region():
    net = leaky_1d(0.5)
    v = density_at_point(net, LatentPrior.standard_gaussian(1), [0.5], [[0.2], [0.9]])
    np.testing.assert_allclose(v.latent_preimage, [0.5])


def test_point_wrong_length():
    with pytest.raises(InputError):
        density_at_point(leaky_1d(), LatentPrior.standard_gaussian(1), [0.5, 0.5], [[0.1]])


# ---------------------------------------------------------------- normalization on S = D nets


def test_two_region_density_integrates_to_one():
    net = make_toy(TwoRegion1D(0.5, 1.0))
    prior = LatentPrior.uniform_box([-1.0], [1.0])
    xs = np.linspace(-0.5, 1.0, 3001)
    p = [density_at_point(net, prior, [x], [[-0.5], [0.5]]).p for x in xs]
    assert np.trapezoid(p, xs) == pytest.approx(1.0, rel=0.01)


def test_leaky_2d_density_integrates_to_one():
    net, params = leaky_2d()
    prior = LatentPrior.standard_gaussian(2)
    g = np.linspace(-9, 9, 361)
    X = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    Z = invert_leaky_2d(params, X)
    np.testing.assert_allclose(forward(net, Z), X, atol=1e-10)
    A, _ = region_jacobians(net, Z)
    log_p = prior.log_density(Z) - log_volumes(A)
    mass = np.exp(log_p).sum() * (g[1] - g[0]) ** 2
    assert mass == pytest.approx(1.0, rel=0.01)
    # the generic point path agrees on a subsample
    for i in range(0, len(X), 9973):
        v = density_at_point(net, prior, X[i], [Z[i]])
        assert v.log_p == pytest.approx(log_p[i], abs=1e-9)


# ---------------------------------------------------------------- entropy


def test_entropy_identity_uniform_is_zero():
    est = pushforward_entropy(linear_net(np.eye(2)), LatentPrior.uniform_box([0, 0], [1, 1]), 5000, seed=0)
    assert est.value == pytest.approx(0.0, abs=1e-14)
    assert est.n_excluded == 0 and est.warning is None


def test_entropy_linear_scaling():
    est = pushforward_entropy(linear_net(2 * np.eye(2)), LatentPrior.uniform_box([0, 0], [1, 1]), 5000, seed=0)
    assert float(est) == pytest.approx(2 * np.log(2.0), abs=1e-12)


def test_entropy_two_region_closed_form():
    net = make_toy(TwoRegion1D(0.5, 1.0))
    est = pushforward_entropy(net, LatentPrior.uniform_box([-1.0], [1.0]), 1_000_000, seed=0)
    exact = 0.5 * np.log(2.0)
    assert abs(est.value - exact) <= 1e-3
    assert abs(est.value - exact) <= 3 * est.std_error


def test_entropy_warns_on_rank_deficient_mass():
    net = CpaNetwork((dense([[1.0]], act=Activation.relu()), dense([[1.0]])))
    est = pushforward_entropy(net, LatentPrior.uniform_box([-1.0], [1.0]), 10_000, seed=1)
    assert est.n_excluded == pytest.approx(5000, abs=300)
    assert est.warning is not None
    assert est.value == pytest.approx(np.log(2.0), abs=1e-12)


def test_entropy_thread_invariant():
    net = make_toy(TriangularSupport2D())
    prior = LatentPrior.uniform_box([0, 0], [1, 1])
    a = pushforward_entropy(net, prior, 20_000, seed=4, threads=1)
    b = pushforward_entropy(net, prior, 20_000, seed=4, threads=3)
    assert a == b


@given(st.floats(0.05, 5.0), st.floats(0.05, 5.0))
def test_entropy_two_region_any_slopes(neg, pos):
    net = make_toy(TwoRegion1D(neg, pos))
    est = pushforward_entropy(net, LatentPrior.uniform_box([-1.0], [1.0]), 4096, seed=2)
    exact = np.log(2.0) + 0.5 * np.log(neg) + 0.5 * np.log(pos)
    assert abs(est.value - exact) <= 5 * est.std_error + 1e-12
