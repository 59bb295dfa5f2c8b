import math

import numpy as np
import pytest

from graspvae import hgg_vae
from graspvae.errors import ShapeError, UsageError, ValidationError
from graspvae.grasp_data import normalize
from graspvae.hgg_vae import (HggArchitecture, LatentDistribution, TrainingConfig, build_hgg, decode, encode,
                              kl_divergence, load_model, loss, reparameterize, save_model, train)

SMALL = HggArchitecture(latent_dim=2, input_head_widths=(5,), main_widths=(7, 6), output_head_widths=(4,))


def test_default_count_and_n2_encoder_width():
    assert 29_000 <= HggArchitecture().parameter_count() <= 31_000
    model = build_hgg(HggArchitecture(latent_dim=2))
    assert model.nets["enc_main"].output_width == 4


def test_zero_width_is_shape_error():
    with pytest.raises(ShapeError):
        HggArchitecture(main_widths=(112, 0))


def test_size_targeting():
    for target in (12_000, 20_000, 30_000):
        arch = hgg_vae.architecture_for_size(target, latent_dim=4)
        assert abs(arch.parameter_count() - target) / target < 0.02


def test_zero_final_layer_encodes_to_prior(dataset):
    model = build_hgg(seed=3, stats=dataset.stats)
    enc = model.nets["enc_main"]
    last = len(enc.specs) - 1
    enc.weights(last)[...] = 0.0
    enc.biases(last)[...] = 0.0
    dist = encode(model, dataset[0])
    np.testing.assert_array_equal(dist.means, np.zeros(3))
    np.testing.assert_array_equal(dist.log_variances, np.zeros(3))


def test_encode_is_deterministic(dataset):
    model = build_hgg(seed=1, stats=dataset.stats)
    a, b = encode(model, dataset[5]), encode(model, dataset[5])
    assert a.means.tobytes() == b.means.tobytes()


def test_reparameterize_limits_and_moments():
    dist = LatentDistribution(np.array([0.3, -1.0]), np.array([-50.0, -50.0]))
    np.testing.assert_allclose(reparameterize(dist, np.random.default_rng(0)), dist.means, atol=1e-10)
    unit = LatentDistribution(np.zeros((100_000, 3)), np.zeros((100_000, 3)))
    z = reparameterize(unit, np.random.default_rng(1))
    assert np.all(np.abs(z.mean(axis=0)) < 0.02)
    assert np.all(np.abs(z.var(axis=0) - 1.0) < 0.05)
    again = reparameterize(unit, np.random.default_rng(1))
    assert z.tobytes() == again.tobytes()


def test_kl_examples():
    per, total = kl_divergence(LatentDistribution(np.zeros(2), np.zeros(2)))
    assert total == 0.0
    per, total = kl_divergence(LatentDistribution(np.array([1.0, 0.0]), np.zeros(2)))
    np.testing.assert_allclose(per, [0.5, 0.0])
    assert total == 0.5


def _kl_monte_carlo(mu, lv, rng, n=1_000_000):
    std = np.exp(0.5 * lv)
    z = mu + std * rng.standard_normal((n, mu.size))
    log_q = -0.5 * (((z - mu) / std) ** 2 + lv + math.log(2 * math.pi))
    log_p = -0.5 * (z ** 2 + math.log(2 * math.pi))
    return float((log_q - log_p).sum(axis=1).mean())


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(11)
    mu = rng.normal(0, 1.0, 3)
    lv = rng.normal(0, 0.7, 3)
    _, closed = kl_divergence(LatentDistribution(mu, lv))
    assert abs(_kl_monte_carlo(mu, lv, rng) - closed) / closed < 0.01


def test_loss_needs_records(dataset):
    model = build_hgg(SMALL, stats=dataset.stats)
    with pytest.raises(UsageError):
        loss(model, [], 0.001)


def test_loss_matches_manual_computation(dataset):
    model = build_hgg(SMALL, seed=2, stats=dataset.stats)
    batch = [dataset[3], dataset[100]]
    beta = 0.25
    eps = np.array([[0.3, -1.2], [0.8, 0.1]])
    x = np.array([normalize(r, dataset.stats).values for r in batch])
    mu, lv, _ = model.encode_units(x)
    out, _ = model.decode_units(mu + eps * np.exp(0.5 * lv), x[:, 8:])
    groups = {"position": range(0, 3), "orientation": range(3, 7), "spread": range(7, 8)}
    manual = {}
    for name, cols in groups.items():
        manual[name] = sum(sum((out[r][c] - x[r][c]) ** 2 for r in range(2)) / 2 for c in cols)
    kl = sum(sum(0.5 * (mu[r][j] ** 2 + math.exp(lv[r][j]) - 1 - lv[r][j]) for j in range(2)) for r in range(2)) / 2
    got = loss(model, batch, beta, eps=eps)
    for name in groups:
        assert getattr(got, name) == pytest.approx(manual[name], rel=1e-12)
    assert got.kl == pytest.approx(kl, rel=1e-12)
    assert got.total == pytest.approx(sum(manual.values()) + beta * kl, rel=1e-12)
    assert loss(model, batch, 0.0, eps=eps).total == pytest.approx(got.reconstruction, rel=1e-12)


def test_full_model_gradient_matches_finite_differences(dataset):
    model = build_hgg(SMALL, seed=4, stats=dataset.stats)
    x = dataset.normalized()[[0, 40, 90, 140]]
    eps = np.random.default_rng(5).standard_normal((4, 2))
    grads = np.zeros_like(model.params)
    hgg_vae.forward_backward(model, x, eps, 0.3, grads)
    h = 1e-5
    num = np.empty_like(grads)
    for k in range(model.params.size):
        keep = model.params[k]
        model.params[k] = keep + h
        plus = hgg_vae.forward_backward(model, x, eps, 0.3, np.zeros_like(grads)).total
        model.params[k] = keep - h
        minus = hgg_vae.forward_backward(model, x, eps, 0.3, np.zeros_like(grads)).total
        model.params[k] = keep
        num[k] = (plus - minus) / (2 * h)
    assert np.linalg.norm(grads - num) / np.linalg.norm(num) < 1e-6


def test_decoded_quaternions_are_unit(dataset):
    model = build_hgg(seed=6, stats=dataset.stats)
    z = np.random.default_rng(7).uniform(-5, 5, size=(500, 3))
    out = model.decode_arrays(z, dataset.planes[0])
    np.testing.assert_allclose(np.linalg.norm(out[:, 3:7], axis=1), 1.0, atol=1e-9)
    g = decode(model, z[0], dataset[0].plane)
    assert abs(np.linalg.norm(g.orientation) - 1.0) < 1e-9


def test_short_training_lowers_loss_and_is_deterministic(dataset):
    cfg = TrainingConfig(epochs=50, seed=3)
    _, rep1 = train(build_hgg(SMALL, seed=1), dataset, cfg)
    _, rep2 = train(build_hgg(SMALL, seed=1), dataset, cfg)
    assert rep1.total[-1] < rep1.total[0]
    assert rep1.total == rep2.total
    assert all(k >= -1e-12 for k in rep1.kl_per_variable)


def test_batch_larger_than_dataset_rejected(dataset):
    with pytest.raises(ValidationError):
        train(build_hgg(SMALL), dataset, TrainingConfig(epochs=1, batch_size=1000))


def test_default_training_reconstructs(trained, dataset):
    model, report = trained
    assert report.recon_position[-1] <= 0.01
    assert report.used_latent_variables == hgg_vae.count_used(report.kl_per_variable)
    rec = dataset[17]
    g = decode(model, encode(model, rec).means, rec.plane)
    assert np.linalg.norm(np.subtract(g.position, rec.grasp.position)) < 0.02


@pytest.mark.slow
def test_large_beta_collapses_kl(trained, dataset):
    model, report = trained
    _, big = train(build_hgg(seed=0), dataset, TrainingConfig(kl_coefficient=10.0, seed=0))
    assert big.kl[-1] < 1e-3
    small_recon = loss(model, dataset, 0.0005).reconstruction
    big_recon = big.reconstruction[-1]
    assert big_recon >= 5 * small_recon


def test_model_file_round_trip(tmp_path, trained):
    model, _ = trained
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.params.tobytes() == model.params.tobytes()
    assert back.stats == model.stats and back.arch == model.arch
