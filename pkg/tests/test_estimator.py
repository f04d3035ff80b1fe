import numpy as np
import pytest
import torch

from _gradcheck_cases import estimation_loss_grad_error, reduced_skynet
from skyforge.config import EstimatorConfig
from skyforge.estimator import (
    CameraCrop,
    azimuth_loss,
    azimuth_to_bin,
    bin_center,
    estimate_lighting,
    estimator_backbone,
    read_crops,
    render_crop,
    save_estimator,
    load_estimator,
    sky_estimation_loss,
    train_image_to_azimuth,
    train_image_to_sky,
    wrap_angle,
    write_crops,
)
from skyforge.pano import SkyPanorama, SunPosition, detect_sun, solid_angle_map


@pytest.fixture(scope="module")
def sunny_sky():
    from skyforge.synth import sample_sky

    for seed in range(50):
        sky, _, sun, params = sample_sky(seed)
        if params.weather_tag == "clear":
            return sky, sun
    raise RuntimeError("no clear sample found")


class TestAzimuthBins:
    def test_bins_partition_range(self):
        edges = [-np.pi + j * np.pi / 16 for j in range(33)]
        for j in range(32):
            inside = (edges[j] + edges[j + 1]) / 2
            assert azimuth_to_bin(inside) == j

    def test_bin_center_round_trip(self):
        for j in range(32):
            assert azimuth_to_bin(bin_center(j)) == j

    def test_wraparound(self):
        assert azimuth_to_bin(np.pi) == azimuth_to_bin(-np.pi)
        assert wrap_angle(np.pi) == pytest.approx(-np.pi)
        assert wrap_angle(3 * np.pi / 2) == pytest.approx(-np.pi / 2)


class TestAzimuthLoss:
    def test_perfect_prediction_zero(self):
        logits = torch.full((1, 32), -40.0)
        logits[0, 5] = 40.0
        assert azimuth_loss(logits, torch.tensor([5])).item() == pytest.approx(0.0, abs=1e-6)

    def test_uniform_is_log_bins(self):
        logits = torch.zeros(1, 32)
        assert azimuth_loss(logits, torch.tensor([7])).item() == pytest.approx(
            np.log(32), rel=1e-6
        )

    def test_monotone_in_target_probability(self):
        base = torch.zeros(1, 32)
        better = base.clone()
        better[0, 3] = 1.0
        assert azimuth_loss(better, torch.tensor([3])) < azimuth_loss(base, torch.tensor([3]))

    def test_matches_direct_kl_with_one_hot(self, rng):
        logits = torch.from_numpy(rng.normal(size=(1, 32)).astype(np.float32))
        target = 11
        probs = torch.softmax(logits, dim=1)[0].numpy()
        direct = -np.log(probs[target])
        assert azimuth_loss(logits, torch.tensor([target])).item() == pytest.approx(
            direct, rel=1e-5
        )


class TestBackbone:
    def test_head_sizes(self):
        sky_head = estimator_backbone(0, 64)
        az_head = estimator_backbone(0, 32)
        x = torch.randn(2, 3, 64, 64)
        assert sky_head.forward(x).shape == (2, 64)
        logits = az_head.forward(x)
        probs = torch.softmax(logits, dim=1)
        assert torch.allclose(probs.sum(dim=1), torch.ones(2), atol=1e-6)

    def test_deterministic_under_seed(self):
        a = estimator_backbone(3, 64).export_parameters()
        b = estimator_backbone(3, 64).export_parameters()
        assert all(np.array_equal(a[k], b[k]) for k in a)


class TestRenderCrop:
    def test_black_sky_black_crop(self):
        sky = SkyPanorama(np.zeros((32, 128, 3), np.float32))
        crop = render_crop(sky, SunPosition(0.2, 0.5), camera_azimuth=0.1, rng_seed=0)
        assert crop.image.max() == 0.0

    def test_linearity(self, sunny_sky):
        sky, sun = sunny_sky
        double = SkyPanorama((2 * sky.data).astype(np.float32))
        a = render_crop(sky, sun, camera_azimuth=0.3, rng_seed=5)
        b = render_crop(double, sun, camera_azimuth=0.3, rng_seed=5)
        assert np.allclose(b.image, 2 * a.image, rtol=1e-5, atol=1e-7)

    def test_relative_azimuth_label(self, sunny_sky):
        sky, sun = sunny_sky
        crop = render_crop(sky, sun, camera_azimuth=sun.azimuth, rng_seed=1)
        assert crop.rel_sun_azimuth == pytest.approx(0.0, abs=1e-12)

    def test_invalid_fov(self, sunny_sky):
        sky, sun = sunny_sky
        with pytest.raises(ValueError):
            render_crop(sky, sun, camera_azimuth=0.0, rng_seed=0, fov_deg=0.0)

    def test_deterministic(self, sunny_sky):
        sky, sun = sunny_sky
        a = render_crop(sky, sun, camera_azimuth=1.0, rng_seed=9)
        b = render_crop(sky, sun, camera_azimuth=1.0, rng_seed=9)
        assert np.array_equal(a.image, b.image)


class TestSkyEstimationLoss:
    def test_zero_when_equal(self):
        model = reduced_skynet(0)
        z = torch.randn(2, 4)
        dom = torch.from_numpy(solid_angle_map(8, 32).grid().astype(np.float32))
        loss, report = sky_estimation_loss(z, z.clone(), model.decoder,
                                           model.normalizer, dom, lambda_c=0.1)
        assert report.l_z == pytest.approx(0.0, abs=1e-7)
        assert report.l_c == pytest.approx(0.0, abs=1e-7)
        assert loss.item() == pytest.approx(0.0, abs=1e-7)

    def test_lambda_zero_gives_pure_code_loss(self):
        model = reduced_skynet(0)
        rng = np.random.default_rng(1)
        z_hat = torch.from_numpy(rng.normal(size=(3, 4)).astype(np.float32))
        z = torch.from_numpy(rng.normal(size=(3, 4)).astype(np.float32))
        dom = torch.from_numpy(solid_angle_map(8, 32).grid().astype(np.float32))
        loss, report = sky_estimation_loss(z_hat, z, model.decoder,
                                           model.normalizer, dom, lambda_c=0.0)
        expected = torch.linalg.vector_norm(z_hat - z, dim=1).mean().item()
        assert loss.item() == pytest.approx(expected, rel=1e-6)
        assert report.l_i == pytest.approx(report.l_z, rel=1e-6)

    def test_source_weight_scales_gradient(self):
        model = reduced_skynet(0)
        rng = np.random.default_rng(2)
        z_hat = torch.from_numpy(rng.normal(size=(1, 4)).astype(np.float32))
        z_hat1 = z_hat.clone().requires_grad_(True)
        z_hat4 = z_hat.clone().requires_grad_(True)
        z = torch.from_numpy(rng.normal(size=(1, 4)).astype(np.float32))
        dom = torch.from_numpy(solid_angle_map(8, 32).grid().astype(np.float32))
        loss1, _ = sky_estimation_loss(z_hat1, z, model.decoder, model.normalizer,
                                       dom, 0.05, torch.tensor([1.0]))
        loss4, _ = sky_estimation_loss(z_hat4, z, model.decoder, model.normalizer,
                                       dom, 0.05, torch.tensor([4.0]))
        (g1,) = torch.autograd.grad(loss1, z_hat1)
        (g4,) = torch.autograd.grad(loss4, z_hat4)
        assert torch.allclose(g4, 4 * g1, rtol=1e-5)

    def test_gradient_check_reduced(self):
        # fixed instance with margin; fp32 rounding dominates at other seeds
        assert estimation_loss_grad_error(seed=0) < 1e-3


def make_crop_set(sunny_sky, n=48, latent_dim=4):
    sky, sun = sunny_sky
    rng = np.random.default_rng(0)
    crops = []
    for i in range(n):
        az = rng.uniform(-np.pi, np.pi)
        crop = render_crop(sky, sun, camera_azimuth=az, rng_seed=100 + i, crop_size=32)
        crop.z = rng.normal(size=latent_dim).astype(np.float32)
        crops.append(crop)
    return crops


class TestTraining:
    def test_azimuth_smoke_beats_uniform(self, sunny_sky):
        crops = make_crop_set(sunny_sky, n=64)
        cfg = EstimatorConfig(azimuth_epochs=3, batch_size=16, crop_size=32)
        model = train_image_to_azimuth(crops, cfg, seed=0)
        assert model.history[-1]["loss"] < np.log(32)

    def test_image_to_sky_smoke_beats_zero_baseline(self, sunny_sky):
        # learnable signal: every crop carries the same code, so any progress
        # pulls predictions below the predict-zero baseline ||z||
        sky_model = reduced_skynet(3)
        crops = make_crop_set(sunny_sky, n=64, latent_dim=4)
        label = np.array([0.7, -0.4, 0.2, 1.0], np.float32)
        for c in crops:
            c.z = label.copy()
        cfg = EstimatorConfig(
            phase1_epochs=10, phase2_epochs=0, batch_size=8, crop_size=32,
            phase1_lr=3e-3,
        )
        model = train_image_to_sky(crops, sky_model, cfg, seed=0)
        zs = np.stack([c.z for c in crops])
        baseline = np.linalg.norm(zs, axis=1).mean()
        preds = np.stack([model.predict(c.image) for c in crops])
        l_z = np.linalg.norm(preds - zs, axis=1).mean()
        assert l_z < baseline

    def test_phase_boundary_changes_rate_and_lambda(self, sunny_sky):
        sky_model = reduced_skynet(3)
        crops = make_crop_set(sunny_sky, n=32, latent_dim=4)
        cfg = EstimatorConfig(phase1_epochs=1, phase2_epochs=1, batch_size=16,
                              crop_size=32, phase1_lr=3e-4, phase2_lr=2e-6)
        model = train_image_to_sky(crops, sky_model, cfg, seed=0)
        assert model.history[0]["lr"] == pytest.approx(3e-4)
        assert model.history[0]["lambda_c"] == 0.0
        assert model.history[1]["lr"] == pytest.approx(2e-6)
        assert model.history[1]["lambda_c"] > 0.0

    def test_missing_labels_rejected(self, sunny_sky):
        sky, sun = sunny_sky
        crop = render_crop(sky, sun, camera_azimuth=0.0, rng_seed=0, crop_size=32)
        with pytest.raises(ValueError, match="labels"):
            train_image_to_sky([crop], reduced_skynet(0), EstimatorConfig(crop_size=32))


class TestEstimateLighting:
    def test_shape_contract(self, smoke_sky_model, sunny_sky):
        sky, sun = sunny_sky
        cfg = EstimatorConfig(phase1_epochs=1, phase2_epochs=0, azimuth_epochs=1,
                              batch_size=8)
        rng = np.random.default_rng(0)
        crops = []
        for i in range(16):
            crop = render_crop(sky, sun, camera_azimuth=rng.uniform(-np.pi, np.pi),
                               rng_seed=i)
            crop.z = smoke_sky_model.encode(sky)
            crops.append(crop)
        i2s = train_image_to_sky(crops, smoke_sky_model, cfg, seed=0)
        i2a = train_image_to_azimuth(crops, cfg, seed=0)
        est = estimate_lighting(crops[0].image, smoke_sky_model, i2s, i2a)
        assert est.panorama.data.shape == (32, 128, 3)
        assert est.azimuth_distribution.shape == (32,)
        assert est.azimuth_distribution.sum() == pytest.approx(1.0, abs=1e-6)
        assert est.z.shape == (64,)
        # re-centering the estimate moves its brightest column to the middle
        est2 = estimate_lighting(crops[0].image, smoke_sky_model, i2s, i2a,
                                 azimuth_mode="expectation")
        assert np.isfinite(est2.sun.azimuth)

    def test_round_trip_files(self, tmp_path, sunny_sky):
        crops = make_crop_set(sunny_sky, n=5)
        write_crops(tmp_path, crops)
        loaded = read_crops(tmp_path)
        assert len(loaded) == 5
        for a, b in zip(crops, loaded):
            assert np.array_equal(a.image, b.image)
            assert a.rel_sun_azimuth == pytest.approx(b.rel_sun_azimuth)
            assert np.array_equal(a.z, b.z)
            assert a.source_weight == b.source_weight

    def test_estimator_checkpoint_round_trip(self, tmp_path, sunny_sky):
        crops = make_crop_set(sunny_sky, n=16)
        cfg = EstimatorConfig(azimuth_epochs=1, batch_size=8, crop_size=32)
        model = train_image_to_azimuth(crops, cfg, seed=0)
        path = tmp_path / "i2a.ckpt"
        save_estimator(path, model)
        loaded = load_estimator(path)
        probs_a = model.predict(crops[0].image)
        probs_b = loaded.predict(crops[0].image)
        assert np.allclose(probs_a, probs_b, atol=1e-7)
