import numpy as np
import pytest

from panolayers import imageio


def test_rgb_round_trip(tmp_path, rng):
    rgb = rng.uniform(0, 1, (16, 32, 3))
    path = tmp_path / "img.png"
    imageio.save_rgb(path, rgb)
    back = imageio.load_rgb(path)
    assert back.shape == rgb.shape
    assert np.abs(back - rgb).max() <= 0.5 / 255.0 + 1e-9


def test_rgb_quantization_exact_on_grid(tmp_path):
    rgb = np.round(np.linspace(0, 1, 16 * 32 * 3) * 255).reshape(16, 32, 3) / 255.0
    path = tmp_path / "img.png"
    imageio.save_rgb(path, rgb)
    np.testing.assert_array_equal(imageio.load_rgb(path), rgb)


def test_pfm_round_trip(tmp_path, rng):
    depth = rng.uniform(0.5, 50, (12, 24)).astype(np.float32).astype(np.float64)
    path = tmp_path / "d.pfm"
    imageio.save_pfm(path, depth)
    np.testing.assert_array_equal(imageio.load_pfm(path), depth)


def test_pfm_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.pfm"
    path.write_bytes(b"PF\n2 2\n-1.0\n" + b"\x00" * 48)
    with pytest.raises(ValueError):
        imageio.load_pfm(path)


def test_depth_png16_round_trip(tmp_path):
    depth = np.array([[1.0, 2.5], [10.0, 0.125]])
    path = tmp_path / "d.png"
    imageio.save_depth_png16(path, depth, scale=1000.0)
    back = imageio.load_depth(path, scale=1000.0)
    np.testing.assert_allclose(back, depth, atol=0.5 / 1000.0)


def test_depth_png16_requires_scale(tmp_path):
    depth = np.ones((4, 4))
    path = tmp_path / "d.png"
    imageio.save_depth_png16(path, depth, scale=100.0)
    with pytest.raises(ValueError):
        imageio.load_depth(path)


def test_label_map_round_trip(tmp_path):
    labels = np.arange(12, dtype=np.int32).reshape(3, 4) * 100
    path = tmp_path / "labels.png"
    imageio.save_label_map(path, labels)
    np.testing.assert_array_equal(imageio.load_label_map(path), labels)


def test_mask_round_trip(tmp_path, rng):
    mask = rng.uniform(size=(8, 16)) > 0.5
    path = tmp_path / "m.png"
    imageio.save_mask(path, mask)
    np.testing.assert_array_equal(imageio.load_mask(path), mask)
