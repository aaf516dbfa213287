import numpy as np
import pytest

from panolayers.erp import (
    CalibrationEstimate,
    PanoramaImage,
    PinholeCamera,
    angles_to_pixel,
    cartesian_to_spherical,
    extract_perspective_view,
    pixel_to_angles,
    sample_equirect,
    spherical_to_cartesian,
    upright_variance_filter,
)

from conftest import band_limited_pano


def _bilinear(img, x, y):
    """Sample at continuous image coords (pixel centers at index + 0.5)."""
    xf = np.clip(x - 0.5, 0, img.shape[1] - 1)
    yf = np.clip(y - 0.5, 0, img.shape[0] - 1)
    x0, y0 = int(xf), int(yf)
    x1, y1 = min(x0 + 1, img.shape[1] - 1), min(y0 + 1, img.shape[0] - 1)
    fx, fy = xf - x0, yf - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


class TestPixelAngleMaps:
    def test_center(self):
        theta, phi = pixel_to_angles(512, 256, 1024, 512)
        assert theta == 0.0
        assert phi == 0.0

    def test_corner(self):
        theta, phi = pixel_to_angles(0, 0, 1024, 512)
        assert theta == -np.pi
        assert phi == -np.pi / 2

    def test_direct_formula(self):
        theta, phi = pixel_to_angles(768, 128, 1024, 512)
        assert theta == pytest.approx(np.pi / 2, abs=1e-15)
        assert phi == pytest.approx(-np.pi / 4, abs=1e-15)

    def test_inverse_center(self):
        u, v = angles_to_pixel(0.0, 0.0, 1024, 512)
        assert u == 512.0 and v == 256.0

    def test_inverse_corner(self):
        u, v = angles_to_pixel(-np.pi, -np.pi / 2, 1024, 512)
        assert u == 0.0 and v == 0.0

    def test_round_trip_1000_random(self, rng):
        w, h = 1024, 512
        u = rng.uniform(0, w, 1000)
        v = rng.uniform(0, h, 1000)
        theta, phi = pixel_to_angles(u, v, w, h)
        u2, v2 = angles_to_pixel(theta, phi, w, h)
        assert np.max(np.abs(u2 - u)) < 1e-9
        assert np.max(np.abs(v2 - v)) < 1e-9

    def test_out_of_range_pixel(self):
        with pytest.raises(ValueError):
            pixel_to_angles(-1, 0, 64, 32)
        with pytest.raises(ValueError):
            pixel_to_angles(0, 32, 64, 32)

    def test_out_of_range_angles(self):
        with pytest.raises(ValueError):
            angles_to_pixel(3.2, 0.0, 64, 32)
        with pytest.raises(ValueError):
            angles_to_pixel(0.0, 2.0, 64, 32)


class TestSphericalCartesian:
    def test_unit_forward(self):
        p = spherical_to_cartesian(0.0, 0.0, 1.0)
        np.testing.assert_allclose(p, [1, 0, 0], atol=1e-15)

    def test_equator_quarter_turn(self):
        p = spherical_to_cartesian(np.pi / 2, 0.0, 2.0)
        np.testing.assert_allclose(p, [0, 0, 2], atol=1e-15)

    def test_zenith_pole(self):
        p = spherical_to_cartesian(0.0, np.pi / 2, 3.0)
        np.testing.assert_allclose(p, [0, 3, 0], atol=1e-15)

    def test_nonpositive_depth_rejected(self):
        with pytest.raises(ValueError):
            spherical_to_cartesian(0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            spherical_to_cartesian(0.0, 0.0, -1.0)

    def test_inverse_simple(self):
        theta, phi, d = cartesian_to_spherical([1.0, 0.0, 0.0])
        assert theta == 0.0 and phi == 0.0 and d == 1.0

    def test_pole_convention(self):
        theta, phi, d = cartesian_to_spherical([0.0, 5.0, 0.0])
        assert theta == 0.0
        assert phi == pytest.approx(np.pi / 2)
        assert d == 5.0

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            cartesian_to_spherical([0.0, 0.0, 0.0])

    def test_round_trip_1000_random(self, rng):
        norms = np.exp(rng.uniform(np.log(1e-3), np.log(1e6), 1000))
        dirs = rng.normal(size=(1000, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = dirs * norms[:, None]
        theta, phi, d = cartesian_to_spherical(pts)
        back = spherical_to_cartesian(theta, phi, d)
        rel = np.linalg.norm(back - pts, axis=1) / norms
        assert rel.max() < 1e-6

    def test_norm_preservation(self, rng):
        theta = rng.uniform(-np.pi, np.pi, 500)
        phi = rng.uniform(-np.pi / 2, np.pi / 2, 500)
        d = rng.uniform(0.1, 100, 500)
        pts = spherical_to_cartesian(theta, phi, d)
        np.testing.assert_allclose(np.linalg.norm(pts, axis=1), d, rtol=1e-9)


class TestPanoramaImage:
    def test_aspect_enforced(self):
        with pytest.raises(ValueError):
            PanoramaImage(np.zeros((64, 64, 3)))

    def test_depth_validated(self):
        rgb = np.zeros((32, 64, 3))
        with pytest.raises(ValueError):
            PanoramaImage(rgb, depth=np.zeros((32, 64)))
        with pytest.raises(ValueError):
            PanoramaImage(rgb, depth=np.full((32, 64), np.nan))

    def test_immutable_after_load(self):
        pano = PanoramaImage(np.zeros((32, 64, 3)))
        with pytest.raises(ValueError):
            pano.rgb[0, 0, 0] = 1.0


class TestPerspectiveExtraction:
    def test_constant_panorama_gives_constant_view(self):
        rgb = np.full((64, 128, 3), 0.42)
        pano = PanoramaImage(rgb)
        cam = PinholeCamera.from_angles(33.0, -12.0, 75.0, 41, 41)
        view = extract_perspective_view(pano, cam)
        np.testing.assert_allclose(view, 0.42, atol=1e-12)

    def test_identity_center_pixel_samples_origin_angles(self):
        rgb = band_limited_pano(256, 128, seed=5)
        pano = PanoramaImage(rgb)
        cam = PinholeCamera(fov_deg=90.0, width=33, height=33)
        view = extract_perspective_view(pano, cam)
        direct = sample_equirect(rgb, 0.0, 0.0)
        np.testing.assert_allclose(view[16, 16], direct, atol=1e-12)

    def test_four_views_cover_equator(self):
        rgb = band_limited_pano(512, 256, seed=2)
        pano = PanoramaImage(rgb)
        cams = {
            az: PinholeCamera.from_angles(az, 0.0, 90.0, 129, 129)
            for az in (0.0, 90.0, 180.0, 270.0)
        }
        views = {az: extract_perspective_view(pano, c) for az, c in cams.items()}
        thetas = np.linspace(-np.pi, np.pi, 360, endpoint=False)
        for theta in thetas:
            az = np.rad2deg(theta) % 360.0
            best = min(cams, key=lambda a: min(abs(az - a), 360 - abs(az - a)))
            cam = cams[best]
            d = np.array([np.cos(theta), 0.0, np.sin(theta)])
            t = cam.rotation_camera_to_world().T @ d
            assert t[2] > 0.05  # direction inside the covering view
            f = cam.focal_px()
            x = f * t[0] / t[2] + cam.width / 2
            y = f * t[1] / t[2] + cam.height / 2
            sampled = _bilinear(views[best], x, y)
            direct = sample_equirect(rgb, theta, 0.0)
            assert np.abs(sampled - direct).max() <= 2.0 / 255.0

    def test_azimuth_rotation_equals_horizontal_shift(self):
        w, h = 256, 128
        rgb = band_limited_pano(w, h, seed=9)
        pano = PanoramaImage(rgb)
        shift_px = 32  # azimuth delta = shift * 2pi / W
        delta = np.rad2deg(shift_px * 2 * np.pi / w)
        cam0 = PinholeCamera.from_angles(0.0, 0.0, 80.0, 65, 65)
        cam1 = PinholeCamera.from_angles(delta, 0.0, 80.0, 65, 65)
        rotated = extract_perspective_view(pano, cam1)
        shifted = PanoramaImage(np.roll(rgb, -shift_px, axis=1))
        base = extract_perspective_view(shifted, cam0)
        assert np.abs(rotated - base).max() <= 2.0 / 255.0

    def test_camera_validation(self):
        with pytest.raises(ValueError):
            PinholeCamera(fov_deg=0.0)
        with pytest.raises(ValueError):
            PinholeCamera(fov_deg=180.0)
        with pytest.raises(ValueError):
            PinholeCamera(orientation=np.array([1.0, 0.1, 0.0, 0.0]))


class TestUprightFilter:
    def test_constant_input_passes(self):
        est = [CalibrationEstimate(0.0, 0.0)] * 4
        res = upright_variance_filter(est)
        assert res.pitch_variance == 0.0
        assert res.roll_variance == 0.0
        assert res.passed

    def test_population_variance_value(self):
        est = [CalibrationEstimate(p, 0.0) for p in (0, 2, 4, 0)]
        res = upright_variance_filter(est)
        assert res.pitch_variance == pytest.approx(2.75)
        assert not res.passed

    def test_threshold_is_exceed_one(self):
        # variance exactly 1.0 still passes; only > 1.0 fails
        est = [CalibrationEstimate(p, 0.0) for p in (1.0, -1.0)]
        res = upright_variance_filter(est)
        assert res.pitch_variance == pytest.approx(1.0)
        assert res.passed

    def test_roll_also_checked(self):
        est = [CalibrationEstimate(0.0, r) for r in (0, 3, 0, 3)]
        assert not upright_variance_filter(est).passed

    def test_permutation_invariant(self, rng):
        vals = rng.normal(0, 2, size=(6, 2))
        est = [CalibrationEstimate(p, r) for p, r in vals]
        res1 = upright_variance_filter(est)
        perm = [est[i] for i in rng.permutation(6)]
        res2 = upright_variance_filter(perm)
        assert res1.pitch_variance == pytest.approx(res2.pitch_variance)
        assert res1.roll_variance == pytest.approx(res2.roll_variance)

    def test_too_few_estimates(self):
        with pytest.raises(ValueError):
            upright_variance_filter([CalibrationEstimate(0, 0)])
