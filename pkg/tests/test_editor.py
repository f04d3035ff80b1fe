import numpy as np
import pytest

from skyforge.editor import (
    EditRequest,
    build_edit_target,
    brightest_texel,
    edit_target_with_region,
    elevation_of_brightest,
    interpolate_latent,
    project_edit,
)
from skyforge.pano import SkyPanorama, integrate


def sky_with_sun(r=10, c=64, peak=500.0, base=0.1):
    data = np.full((32, 128, 3), base, np.float32)
    data[r, c, :] = peak
    return SkyPanorama(data)


class TestEditRequest:
    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            EditRequest(kind="cloudiness", target=1.0)

    def test_rejects_out_of_range_elevation(self):
        with pytest.raises(ValueError):
            EditRequest(kind="elevation", target=2.0)

    def test_rejects_bad_iteration_and_eta(self):
        with pytest.raises(ValueError):
            EditRequest(kind="intensity", target=1.0, max_iterations=0)
        with pytest.raises(ValueError):
            EditRequest(kind="intensity", target=1.0, eta=0.0)


class TestBuildEditTarget:
    def test_intensity_identity(self):
        sky = sky_with_sun()
        req = EditRequest(kind="intensity", target=500.0)
        out = build_edit_target(sky, req)
        assert np.array_equal(out.data, sky.data)

    def test_elevation_identity(self):
        sky = sky_with_sun()
        current = elevation_of_brightest(sky)
        out = build_edit_target(sky, EditRequest(kind="elevation", target=current))
        assert np.array_equal(out.data, sky.data)

    def test_intensity_multiplier(self):
        sky = sky_with_sun(peak=100.0)
        req = EditRequest(kind="intensity", target=3.0, intensity_mode="multiplier")
        out = build_edit_target(sky, req)
        assert out.data.max() == pytest.approx(300.0, rel=1e-6)

    def test_intensity_zero_clears_window(self):
        sky = sky_with_sun(r=10, c=64, peak=100.0, base=0.5)
        req = EditRequest(kind="intensity", target=0.0)
        out, region = edit_target_with_region(sky, req)
        assert out.data[region].max() == 0.0
        # energy drops by exactly the window's previous content
        lost = integrate(sky) - integrate(out)
        window = sky.data * region[:, :, None]
        assert lost[0] == pytest.approx(integrate(SkyPanorama(window))[0], rel=1e-5)

    def test_elevation_moves_brightest_row(self):
        sky = sky_with_sun(r=16, c=64)
        target_elev = elevation_of_brightest(sky) + np.deg2rad(10)
        out = build_edit_target(sky, EditRequest(kind="elevation", target=target_elev))
        r_new, c_new = brightest_texel(out)
        assert c_new == 64
        assert r_new < 16  # closer to the zenith
        assert abs(elevation_of_brightest(out) - target_elev) < np.deg2rad(3)

    def test_vacated_region_filled_with_border_median(self):
        sky = sky_with_sun(r=16, c=64, peak=100.0, base=0.25)
        target_elev = elevation_of_brightest(sky) + np.deg2rad(30)
        out = build_edit_target(sky, EditRequest(kind="elevation", target=target_elev))
        assert out.data[16, 64, 0] == pytest.approx(0.25, rel=1e-6)


class TestProjectEdit:
    def test_identity_is_length_one(self, smoke_sky_model, rng):
        z0 = rng.normal(size=64).astype(np.float32)
        decoded = smoke_sky_model.decode(z0)
        req = EditRequest(kind="intensity", target=float(decoded.data.max()))
        traj = project_edit(smoke_sky_model, z0, req)
        assert len(traj.points) == 1
        assert traj.stop_reason == "identity"
        assert np.array_equal(traj.final_z, z0)

    def test_losses_non_increasing_and_bounded(self, smoke_sky_model, rng):
        z0 = rng.normal(size=64).astype(np.float32)
        req = EditRequest(kind="intensity", target=3.0, intensity_mode="multiplier",
                          max_iterations=40)
        traj = project_edit(smoke_sky_model, z0, req)
        losses = traj.losses()
        assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))
        assert len(traj.points) <= req.max_iterations + 1
        assert traj.points[-1].loss == min(losses)

    def test_intensity_edit_moves_peak(self, smoke_sky_model, rng):
        z0 = rng.normal(size=64).astype(np.float32)
        before = smoke_sky_model.decode(z0).data.max()
        req = EditRequest(kind="intensity", target=4.0, intensity_mode="multiplier",
                          max_iterations=120)
        traj = project_edit(smoke_sky_model, z0, req)
        after = smoke_sky_model.decode(traj.final_z).data.max()
        assert after > before


class TestInterpolate:
    def test_endpoints(self, rng):
        z1 = rng.normal(size=64).astype(np.float32)
        z2 = rng.normal(size=64).astype(np.float32)
        assert np.array_equal(interpolate_latent(z1, z2, 0.0), z1)
        assert np.array_equal(interpolate_latent(z1, z2, 1.0), z2)

    def test_self_midpoint(self, rng):
        z = rng.normal(size=64).astype(np.float32)
        assert np.array_equal(interpolate_latent(z, z, 0.5), z)

    def test_rejects_out_of_range(self, rng):
        z = rng.normal(size=64).astype(np.float32)
        with pytest.raises(ValueError):
            interpolate_latent(z, z, 1.5)
