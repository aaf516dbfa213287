import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def band_limited_pano(width=256, height=128, seed=0):
    """Smooth low-frequency panorama for interpolation-tolerance tests."""
    rng = np.random.default_rng(seed)
    u, v = np.meshgrid(np.arange(width), np.arange(height))
    theta = (2 * u / width - 1) * np.pi
    phi = (2 * v / height - 1) * np.pi / 2
    phases = rng.uniform(0, 2 * np.pi, size=6)
    r = 0.5 + 0.25 * np.sin(theta + phases[0]) * np.cos(phi + phases[1])
    g = 0.5 + 0.25 * np.sin(2 * theta + phases[2]) * np.cos(phi)
    b = 0.5 + 0.25 * np.cos(theta + phases[4]) * np.sin(phi + phases[5])
    return np.stack([r, g, b], axis=-1)
