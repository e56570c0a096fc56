import numpy as np
import pytest
from numpy.testing import assert_allclose

from pericrack import neural_process as npm
from pericrack.errors import ConfigError, DivergenceError, InputError, ParameterError, ShapeError
from pericrack.tensor import Tensor, grad_check, no_grad

SMALL = npm.NpArchitecture(image_size=8, hidden=24, r_dim=8, z_dim=6)


def small(seed=0, dtype=np.float64):
    return npm.build_np(SMALL, seed=seed, dtype=dtype)


def blobs(n, size=8, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size]
    out = np.empty((n, size, size))
    for k in range(n):
        cy, cx = rng.uniform(1, size - 2, 2)
        out[k] = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 4.0)
    return out


def test_default_architecture_sizes():
    model = npm.build_np(seed=0)
    shapes = {k: v.shape for k, v in model.params.items()}
    assert shapes["enc1_w"] == (400, 3) and shapes["enc3_w"] == (128, 400)
    assert shapes["dec1_w"] == (400, 130) and shapes["dec4_w"] == (1, 400)
    assert shapes["mu_w"] == (128, 128) and shapes["r0"] == (128,)


def test_pixel_grid_and_points():
    g = npm.pixel_grid(28)
    assert g.shape == (784, 2) and g.min() == 0 and g.max() == 1
    assert_allclose(g[1], [1 / 27, 0])
    img = np.random.default_rng(0).random((28, 28))
    pts = npm.image_points(img)
    assert_allclose(pts[28 * 3 + 5], [5 / 27, 3 / 27, img[3, 5]])


def test_sample_context():
    rng = np.random.default_rng(0)
    idx = npm.sample_context(5, 64, 10, rng)
    assert idx.shape == (5, 10)
    assert all(len(set(row)) == 10 and list(row) == sorted(row) for row in idx)
    assert np.array_equal(npm.sample_context(2, 64, 64, rng)[1], np.arange(64))
    with pytest.raises(ParameterError):
        npm.sample_context(1, 64, 65, rng)


# -- encoder and latent head --------------------------------------------------------------

def test_encode_context_invariances():
    model = small()
    pts = npm.image_points(blobs(1)[0])[:12]
    r = model.encode_context(pts).data
    assert_allclose(model.encode_context(pts[:1]).data, model.encode_points(pts[:1]).data[0], rtol=1e-15)
    perm = np.random.default_rng(1).permutation(12)
    assert_allclose(model.encode_context(pts[perm]).data, r, rtol=1e-12, atol=1e-15)
    assert_allclose(model.encode_context(np.concatenate([pts, pts])).data, r, rtol=1e-12, atol=1e-15)


def test_encode_context_errors():
    model = small()
    with pytest.raises(InputError):
        model.encode_context(np.zeros((0, 3)))
    with pytest.raises(ShapeError):
        model.encode_context(np.zeros((4, 2)))


def test_sigma_is_bounded_and_finite():
    model = small()
    rng = np.random.default_rng(0)
    for scale in (1.0, 1e3, 1e6):
        mu, sigma = model.latent_params(rng.normal(size=(50, SMALL.r_dim)) * scale)
        assert np.all(np.isfinite(mu.data)) and np.all(np.isfinite(sigma.data))
        assert np.all(sigma.data >= 0.1) and np.all(sigma.data <= 1.0)
    r = rng.normal(size=SMALL.r_dim)
    assert np.array_equal(model.latent_params(r)[1].data, model.latent_params(r)[1].data)


def test_decoder_range_and_continuity():
    model = small()
    z = np.random.default_rng(0).normal(size=(3, SMALL.z_dim))
    x = np.random.default_rng(1).random((50, 2))
    p = model.decode(z, x).data
    assert p.shape == (3, 50) and np.all((p > 0) & (p < 1))
    assert np.array_equal(p, model.decode(z, x).data)
    assert np.abs(model.decode(z, x + 1e-6).data - p).max() < 1e-4


# -- ELBO ---------------------------------------------------------------------------------------

def test_kl_vanishes_when_context_is_target():
    model = small()
    images = blobs(4)
    _, parts = npm.elbo(model, images, np.tile(np.arange(64), (4, 1)), 0)
    assert parts["kl"] == 0.0
    _, parts = npm.elbo(model, images, npm.sample_context(4, 64, 5, np.random.default_rng(0)), 0)
    assert parts["kl"] > 0


def test_perfect_decoder_has_zero_likelihood_cost():
    model = small()
    model.params["dec4_w"].data[:] = 0
    model.params["dec4_b"].data[:] = 40.0
    value, parts = npm.elbo(model, np.ones((3, 8, 8)), npm.sample_context(3, 64, 7, np.random.default_rng(0)), 1)
    assert abs(parts["loglik"]) < 1e-12
    assert_allclose(value.item(), -parts["kl"], atol=1e-12)
    assert value.item() <= 0


def test_elbo_variance_scales_as_one_over_samples():
    model = small()
    images = blobs(2)
    idx = npm.sample_context(2, 64, 10, np.random.default_rng(0))
    rng = np.random.default_rng(1)

    def spread(S):
        with no_grad():
            return np.var([npm.elbo(model, images, idx, rng.standard_normal((2, S, SMALL.z_dim)))[0].item()
                           for _ in range(400)])
    ratio = spread(1) / spread(8)
    assert 5.0 < ratio < 12.8


def test_elbo_gradient():
    model = small()
    rng = np.random.default_rng(5)
    # zero biases put the origin pixel's pre-activation exactly on the ReLU kink
    for k, v in model.params.items():
        if k.endswith("_b"):
            v.data[:] = rng.normal(size=v.shape) * 0.1
    images = blobs(3)
    idx = npm.sample_context(3, 64, 9, np.random.default_rng(0))
    noise = np.random.default_rng(2).standard_normal((3, 2, SMALL.z_dim))
    err = grad_check(lambda: npm.elbo(model, images, idx, noise)[0], model.parameters(), eps=1e-6, n_samples=8)
    assert err <= 1e-4


def test_elbo_rejects_wrong_image_size():
    with pytest.raises(ShapeError):
        npm.elbo(small(), np.zeros((1, 28, 28)), np.zeros((1, 3), int), 0)


# -- prediction ---------------------------------------------------------------------------------

def test_decode_means_matches_taped_decode():
    model = small()
    z = np.random.default_rng(3).normal(size=(2, 5, SMALL.z_dim))
    with no_grad():
        ref = model.decode(z).data
    got = model.decode_means(z)
    assert got.shape == (2, 5, 64) and got.dtype == np.float64
    assert_allclose(got, ref, rtol=1e-12)
    xstar = np.array([[0.1, 0.2], [0.7, 0.3], [0.5, 0.5]])
    with no_grad():
        assert_allclose(model.decode_means(z[0], xstar), model.decode(z[0], xstar).data, rtol=1e-12)


def test_predict_image_bounds_and_errors():
    model = small()
    pts = npm.image_points(blobs(1)[0])[:10]
    mean, var = npm.predict_image(model, pts, n_samples=30)
    assert mean.shape == var.shape == (8, 8)
    assert np.all(var >= 0) and np.all(var <= 0.25)
    assert np.all((mean > 0) & (mean < 1))
    prior_mean, _ = npm.predict_image(model, np.zeros((0, 3)), n_samples=5)
    assert prior_mean.shape == (8, 8)
    with pytest.raises(InputError):
        npm.predict_image(model, pts, n_samples=1)


def test_variance_map_converges_in_samples():
    model = small()
    # latent spread near its floor, as after training
    model.params["sigma_b"].data[:] = -4.0
    pts = npm.image_points(blobs(1)[0])[:10]
    _, v200 = npm.predict_image(model, pts, n_samples=200, seed=1)
    _, v400 = npm.predict_image(model, pts, n_samples=400, seed=1)
    assert np.abs(v200 - v400).max() < 1e-3


def test_batch_prediction_matches_single_images():
    model = small()
    images = blobs(5)
    idx = npm.sample_context(5, 64, 12, np.random.default_rng(0))
    mean, var = npm.predict_batch(model, images, idx, n_samples=6, seed=3, chunk=2)
    for k in range(5):
        m, v = npm.predict_image(model, npm.image_points(images[k])[idx[k]], n_samples=6, seed=3 + k)
        assert_allclose(mean[k], m, rtol=1e-10)
        assert_allclose(var[k], v, rtol=1e-8, atol=1e-15)


def test_untrained_sweep_is_flat():
    model = small()
    rows = npm.context_sweep(model, blobs(6), sizes=(10, 30, 64), n_samples=4)
    assert [r[0] for r in rows] == [10, 30, 64]
    mse = np.array([r[1] for r in rows])
    assert np.ptp(mse) < 0.2 * mse.mean()


# -- training -------------------------------------------------------------------------------------

CFG = npm.NpTrainConfig(batch_size=8, epochs=3, context_sizes=(5, 20, 64), monitor_images=3, eval_samples=4,
                        monitor_context=10)


def test_training_curves_and_determinism():
    images = blobs(20)
    a_model, a = npm.train_np(small(), images, CFG)
    b_model, b = npm.train_np(small(), images, CFG)
    assert a.epoch == [0, 1, 2, 3] and a == b
    for k in a_model.params:
        assert a_model.params[k].data.tobytes() == b_model.params[k].data.tobytes()
    assert a.elbo[-1] > a.elbo[0]


def test_training_learns_blobs():
    arch = npm.NpArchitecture(image_size=8, hidden=64, r_dim=8, z_dim=6)
    cfg = npm.NpTrainConfig(batch_size=16, epochs=40, context_sizes=(3, 10, 64), monitor_images=8, eval_samples=10,
                            monitor_context=10, learning_rate=3e-3)
    model, curves = npm.train_np(npm.build_np(arch, seed=0), blobs(128), cfg)
    assert np.mean(curves.elbo[-5:]) > np.mean(curves.elbo[:5])
    mse = [m for _, m in npm.context_sweep(model, blobs(16, seed=9), sizes=(3, 10, 64), n_samples=10)]
    assert mse[0] > mse[1] > mse[2]


def test_nan_raises_divergence():
    model = small()
    model.params["enc1_w"].data[0, 0] = np.nan
    with pytest.raises(DivergenceError, match="epoch 0, batch 0"), np.errstate(invalid="ignore"):
        npm.train_np(model, blobs(8), CFG)


def test_config_validation():
    with pytest.raises(ParameterError):
        npm.NpTrainConfig(eval_samples=1)
    with pytest.raises(InputError):
        npm.train_np(small(), np.zeros((0, 8, 8)), CFG)


def test_checkpoint_and_curves_round_trip(tmp_path):
    model = small(dtype=np.float32)
    npm.save_model(model, tmp_path / "np.ckpt")
    back = npm.load_model(tmp_path / "np.ckpt", SMALL)
    for k in model.params:
        assert back.params[k].data.tobytes() == model.params[k].data.tobytes()
    with pytest.raises(ConfigError):
        npm.load_model(tmp_path / "np.ckpt")
    curves = npm.NpCurves([0, 1], [-40.0, -30.5], [0.01, 0.005], [0.1, 0.05])
    curves.to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "epoch,elbo,mean_variance"
    back = npm.read_curves(tmp_path / "c.csv")
    assert back.elbo == curves.elbo and back.mean_variance == curves.mean_variance
