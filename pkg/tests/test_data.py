import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dualgan.autodiff import finite_diff_check
from dualgan.data import (
    FeatureMap,
    NoiseSpec,
    RingMixtureSpec,
    eight_gaussians,
    five_gaussians,
    load_dataset,
    make_ring_mixture,
    rbf_features,
    sample_mixture,
    sample_noise,
    save_dataset,
)


def test_five_gaussians_geometry():
    spec = make_ring_mixture(5, 2.0, 0.1)
    np.testing.assert_allclose(spec.centers[0], [2.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(np.linalg.norm(spec.centers, axis=1), 2.0)
    assert spec == five_gaussians()


def test_eight_gaussians():
    spec = eight_gaussians()
    assert spec.centers.shape == (8, 2)
    assert spec.std ** 2 == pytest.approx(0.02)


def test_single_mode():
    np.testing.assert_allclose(make_ring_mixture(1, 3.0, 0.1).centers, [[3.0, 0.0]], atol=1e-15)


@pytest.mark.parametrize("args", [(0, 2.0, 0.1), (5, -1.0, 0.1), (5, 2.0, 0.0), (2.5, 2.0, 0.1)])
def test_invalid_mixture(args):
    with pytest.raises(ValueError):
        make_ring_mixture(*args) if args[0] != 2.5 else RingMixtureSpec(*args)


def test_degenerate_covariance_hits_centers(rng):
    spec = RingMixtureSpec(5, 2.0, 0.0)
    x = sample_mixture(spec, 200, rng)
    d = np.linalg.norm(x[:, None] - spec.centers[None], axis=2).min(axis=1)
    assert np.all(d <= 1e-12)


def test_mixture_mean_and_determinism():
    spec = five_gaussians()
    x = sample_mixture(spec, 100_000, np.random.default_rng(0))
    assert np.all(np.abs(x.mean(axis=0)) <= 0.05)
    y = sample_mixture(spec, 100_000, np.random.default_rng(0))
    assert np.array_equal(x, y)


def test_every_mode_hit():
    spec = five_gaussians()
    _, modes = sample_mixture(spec, 5000, np.random.default_rng(1), return_modes=True)
    assert set(modes) == set(range(5))


def test_noise_moments_and_support():
    z = sample_noise(NoiseSpec("gaussian", 2), 100_000, np.random.default_rng(0))
    assert np.all(np.abs(z.mean(axis=0)) <= 0.02)
    assert np.all(np.abs(z.var(axis=0) - 1) <= 0.05)
    u = sample_noise(NoiseSpec("uniform", 3), 1000, np.random.default_rng(0))
    assert u.shape == (1000, 3) and np.all(np.abs(u) <= 1)
    assert np.array_equal(u, sample_noise(NoiseSpec("uniform", 3), 1000, np.random.default_rng(0)))
    with pytest.raises(ValueError):
        NoiseSpec("cauchy", 2)
    with pytest.raises(ValueError):
        NoiseSpec("gaussian", 0)


def test_rbf_examples():
    assert rbf_features(np.array([0.3, -1.0]), np.array([[5.0, 5.0]]), 0.2) == pytest.approx([1.0])
    phi = rbf_features(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]), 0.2)
    np.testing.assert_allclose(phi, [0.5, 0.5])
    # |x - a_2|^2 = 8 at T = 0.2
    phi = rbf_features(np.zeros(2), np.array([[0.0, 0.0], [2.0, 2.0]]), 0.2)
    assert phi[0] == pytest.approx(1 / (1 + np.exp(-40)), rel=1e-15)
    with pytest.raises(ValueError):
        rbf_features(np.zeros(2), np.ones((1, 2)), 0.0)


@given(arrays(np.float64, 2, elements=st.floats(-50, 50)), st.floats(0.01, 5.0))
def test_rbf_on_simplex(x, T):
    anchors = np.random.default_rng(0).normal(scale=3, size=(10, 2))
    phi = rbf_features(x, anchors, T)
    assert np.all(phi >= 0) and np.all(np.isfinite(phi))
    assert abs(phi.sum() - 1) <= 1e-12


def _vjp_fd(fmap, rng, d_in=2, points=20):
    worst = 0.0
    for _ in range(points):
        x = rng.normal(size=d_in)
        adj = rng.normal(size=fmap.dim(d_in))

        def f(v):
            phi, vjp = fmap(v[None, :])
            return float(phi[0] @ adj), vjp(adj[None, :])[0]

        worst = max(worst, finite_diff_check(f, x))
    return worst


def test_rbf_vjp_finite_differences(rng):
    fmap = FeatureMap.rbf_from_data(rng.normal(scale=2, size=(50, 2)), 20, rng, 0.2)
    assert _vjp_fd(fmap, rng) <= 1e-5


@pytest.mark.parametrize("concat", [True, False])
def test_random_net_vjp_finite_differences(rng, concat):
    fmap = FeatureMap.random_net(2, (6, 5), rng, concat_layers=concat)
    assert fmap.dim(2) == (11 if concat else 5)
    assert _vjp_fd(fmap, rng) <= 1e-5
    with pytest.raises(ValueError):
        fmap.net_params.values[0] = 1.0


def test_identity_and_roundtrip(rng):
    x = rng.normal(size=(3, 2))
    phi, vjp = FeatureMap("identity")(x)
    assert np.array_equal(phi, x) and np.array_equal(vjp(x), x)
    for fmap in (FeatureMap.rbf_from_data(x, 3, rng), FeatureMap.random_net(2, (4,), rng),
                 FeatureMap("identity")):
        again = FeatureMap.from_dict(fmap.to_dict())
        np.testing.assert_array_equal(again(x)[0], fmap(x)[0])
    with pytest.raises(ValueError):
        FeatureMap("rbf", anchors=np.zeros((0, 2)))
    with pytest.raises(ValueError):
        FeatureMap("fourier")


def test_dataset_snapshot(tmp_path, rng):
    spec = five_gaussians()
    data = sample_mixture(spec, 50, rng)
    save_dataset(tmp_path / "d.npz", spec, data, seed=3)
    spec2, data2, meta = load_dataset(tmp_path / "d.npz")
    assert spec2 == spec and np.array_equal(data2, data) and meta["seed"] == 3
