"""Equirectangular projection geometry.

Converts between panorama pixel coordinates, spherical angles and 3D
Cartesian points, extracts perspective views from panoramas, and applies
the upright-variance filter to externally supplied calibration estimates.

Conventions:
  - Equirectangular image: u in [0, W) left to right, v in [0, H) top to
    bottom, with W = 2H. theta = (2u/W - 1)*pi, phi = (2v/H - 1)*pi/2.
  - World frame: the direction of (theta, phi) is
    (cos phi cos theta, sin phi, cos phi sin theta), so theta=0, phi=0
    is +X and phi=+pi/2 is +Y.
  - Cameras use a right-handed frame with x = image right, y = image
    down, z = forward. An identity-orientation camera looks along +X
    with image-down = +Y, matching the panorama's vertical sense.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "PanoramaImage",
    "PinholeCamera",
    "CalibrationEstimate",
    "UprightCheck",
    "pixel_to_angles",
    "angles_to_pixel",
    "spherical_to_cartesian",
    "cartesian_to_spherical",
    "sample_equirect",
    "extract_perspective_view",
    "upright_variance_filter",
    "quat_normalize",
    "quat_multiply",
    "quat_to_matrix",
    "matrix_to_quat",
]

# Camera base frame: columns are the world directions of (x_cam, y_cam,
# z_cam) for the identity orientation. forward=+X, image-down=+Y, and
# right = down x forward = -Z, keeping the matrix a proper rotation.
CAMERA_BASE = np.array(
    [
        [0.0, 0.0, 1.0],
        [0.0, 1.0, 0.0],
        [-1.0, 0.0, 0.0],
    ]
)


# ---------------------------------------------------------------------------
# Pixel <-> angle maps
# ---------------------------------------------------------------------------


def pixel_to_angles(u, v, width: int, height: int):
    """Map equirectangular pixel coordinates to (theta, phi) in radians.

    theta = (2u/W - 1)*pi in [-pi, pi), phi = (2v/H - 1)*pi/2 in
    [-pi/2, pi/2). Accepts scalars or arrays.

    Raises:
        ValueError: if any coordinate lies outside [0, W) x [0, H).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(u < 0) or np.any(u >= width) or np.any(v < 0) or np.any(v >= height):
        raise ValueError(
            f"pixel coordinates out of range for {width}x{height} panorama"
        )
    theta = (2.0 * u / width - 1.0) * np.pi
    phi = (2.0 * v / height - 1.0) * (np.pi / 2.0)
    return theta, phi


def angles_to_pixel(theta, phi, width: int, height: int):
    """Inverse of :func:`pixel_to_angles`: (theta, phi) -> (u, v).

    Raises:
        ValueError: if theta is outside [-pi, pi] or phi outside
            [-pi/2, pi/2].
    """
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    if np.any(np.abs(theta) > np.pi) or np.any(np.abs(phi) > np.pi / 2):
        raise ValueError("angles out of range: need |theta| <= pi, |phi| <= pi/2")
    u = (theta / np.pi + 1.0) * width / 2.0
    v = (2.0 * phi / np.pi + 1.0) * height / 2.0
    return u, v


# ---------------------------------------------------------------------------
# Spherical <-> Cartesian
# ---------------------------------------------------------------------------


def spherical_to_cartesian(theta, phi, depth):
    """Lift spherical coordinates to 3D points.

    X = d cos(phi) cos(theta), Y = d sin(phi), Z = d cos(phi) sin(theta).
    Broadcasts over array inputs; returns an array with a trailing axis
    of size 3.

    Raises:
        ValueError: if any depth is not strictly positive and finite.
    """
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(~np.isfinite(depth)) or np.any(depth <= 0):
        raise ValueError("depth must be finite and > 0")
    cos_phi = np.cos(phi)
    x = depth * cos_phi * np.cos(theta)
    y = depth * np.sin(phi)
    z = depth * cos_phi * np.sin(theta)
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def cartesian_to_spherical(points):
    """Inverse of :func:`spherical_to_cartesian`.

    Returns (theta, phi, depth) with depth = ||p||_2. At the poles
    (x = z = 0) theta is fixed to 0 by convention.

    Raises:
        ValueError: if any point has zero norm.
    """
    p = np.asarray(points, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    depth = np.sqrt(x * x + y * y + z * z)
    if np.any(depth == 0):
        raise ValueError("cannot convert zero vector to spherical coordinates")
    phi = np.arcsin(np.clip(y / depth, -1.0, 1.0))
    theta = np.arctan2(z, x)  # arctan2(0, 0) = 0 covers the pole convention
    return theta, phi, depth


# ---------------------------------------------------------------------------
# Panorama image
# ---------------------------------------------------------------------------


@dataclass
class PanoramaImage:
    """Equirectangular RGB panorama with optional per-pixel metric depth.

    rgb is (H, W, 3) float64 in [0, 1]; depth, when present, is (H, W)
    float64 with finite positive values. W = 2H is enforced. Arrays are
    marked read-only after validation.
    """

    rgb: np.ndarray
    depth: Optional[np.ndarray] = None

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValueError("rgb must have shape (H, W, 3)")
        h, w = self.rgb.shape[:2]
        if w != 2 * h:
            raise ValueError(f"panorama must satisfy W = 2H, got {w}x{h}")
        if np.any(self.rgb < 0) or np.any(self.rgb > 1):
            raise ValueError("rgb values must lie in [0, 1]")
        if self.depth is not None:
            self.depth = np.asarray(self.depth, dtype=np.float64)
            if self.depth.shape != (h, w):
                raise ValueError("depth shape must match rgb")
            if np.any(~np.isfinite(self.depth)) or np.any(self.depth <= 0):
                raise ValueError("depth values must be finite and > 0")
            self.depth.setflags(write=False)
        self.rgb.setflags(write=False)

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def height(self) -> int:
        return self.rgb.shape[0]


# ---------------------------------------------------------------------------
# Quaternions (w, x, y, z)
# ---------------------------------------------------------------------------


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0:
        raise ValueError("zero quaternion")
    return q / n


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q):
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m):
    """Rotation matrix -> unit quaternion (w >= 0)."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(m)))
        if i == 0:
            s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            q = np.array(
                [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
            )
        elif i == 1:
            s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            q = np.array(
                [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
            q = np.array(
                [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
            )
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


# ---------------------------------------------------------------------------
# Pinhole camera
# ---------------------------------------------------------------------------


@dataclass
class PinholeCamera:
    """Perspective camera pose for view extraction and rendering.

    orientation is a unit quaternion (w, x, y, z) expressing the rotation
    applied to the default pose (looking along +X, image-down = +Y).
    fov_deg is the horizontal field of view.
    """

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))
    fov_deg: float = 90.0
    width: int = 256
    height: int = 256

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.orientation = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        if not np.all(np.isfinite(self.position)):
            raise ValueError("camera position must be finite")
        n = np.linalg.norm(self.orientation)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"orientation quaternion not normalized: |q| = {n}")
        if not (0.0 < self.fov_deg < 180.0):
            raise ValueError("fov must lie strictly inside (0, 180) degrees")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")

    @classmethod
    def from_angles(
        cls,
        azimuth_deg: float,
        elevation_deg: float,
        fov_deg: float = 90.0,
        width: int = 256,
        height: int = 256,
        position=(0.0, 0.0, 0.0),
    ) -> "PinholeCamera":
        """Camera looking at (theta=azimuth, phi=elevation)."""
        az = np.deg2rad(azimuth_deg)
        el = np.deg2rad(elevation_deg)
        # yaw about +Y by -az takes +X to the target azimuth; pitch about
        # +Z by +el raises the forward direction to the target elevation.
        cy, sy = np.cos(-az), np.sin(-az)
        ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        cp, sp = np.cos(el), np.sin(el)
        rz = np.array([[cp, -sp, 0], [sp, cp, 0], [0, 0, 1]])
        return cls(
            position=np.asarray(position, dtype=np.float64),
            orientation=matrix_to_quat(ry @ rz),
            fov_deg=fov_deg,
            width=width,
            height=height,
        )

    def rotation_camera_to_world(self) -> np.ndarray:
        """3x3 matrix taking camera-frame vectors to world frame."""
        return quat_to_matrix(self.orientation) @ CAMERA_BASE

    def focal_px(self) -> float:
        return (self.width / 2.0) / np.tan(np.deg2rad(self.fov_deg) / 2.0)

    def ray_directions(self) -> np.ndarray:
        """(H, W, 3) unit world-frame ray directions through pixel centers."""
        f = self.focal_px()
        xs = (np.arange(self.width) + 0.5 - self.width / 2.0) / f
        ys = (np.arange(self.height) + 0.5 - self.height / 2.0) / f
        xg, yg = np.meshgrid(xs, ys)
        dirs = np.stack([xg, yg, np.ones_like(xg)], axis=-1)
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        return dirs @ self.rotation_camera_to_world().T


# ---------------------------------------------------------------------------
# Panorama sampling and view extraction
# ---------------------------------------------------------------------------


def sample_equirect(image: np.ndarray, theta, phi) -> np.ndarray:
    """Bilinear sample of an equirectangular image at (theta, phi).

    Sample locations of pixel (u, v) are the integer coordinates used by
    pixel_to_angles. u wraps modulo W (the panorama is periodic in
    azimuth); v is clamped to [0, H-1].
    """
    h, w = image.shape[:2]
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    u = (theta / np.pi + 1.0) * w / 2.0
    v = (2.0 * phi / np.pi + 1.0) * h / 2.0

    u0 = np.floor(u).astype(np.int64)
    fu = u - u0
    v0f = np.floor(v)
    fv = v - v0f
    v0 = np.clip(v0f, 0, h - 1).astype(np.int64)
    v1 = np.clip(v0f + 1, 0, h - 1).astype(np.int64)
    fv = np.where(v0f < 0, 0.0, np.where(v0f > h - 1, 1.0, fv))
    u0m = np.mod(u0, w)
    u1m = np.mod(u0 + 1, w)

    if image.ndim == 3:
        fu = fu[..., None]
        fv = fv[..., None]
    top = image[v0, u0m] * (1 - fu) + image[v0, u1m] * fu
    bot = image[v1, u0m] * (1 - fu) + image[v1, u1m] * fu
    return top * (1 - fv) + bot * fv


def extract_perspective_view(pano: PanoramaImage, cam: PinholeCamera) -> np.ndarray:
    """Render a perspective view of the panorama from its center.

    Each output pixel bilinearly samples the panorama where its camera
    ray pierces the sphere. The camera position is ignored (extraction
    is defined at the panorama center).
    """
    dirs = cam.ray_directions()
    theta, phi, _ = cartesian_to_spherical(dirs)
    return sample_equirect(pano.rgb, theta, phi)


# ---------------------------------------------------------------------------
# Upright-variance filter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationEstimate:
    """Externally supplied pitch/roll estimate for one perspective view."""

    pitch_deg: float
    roll_deg: float

    def __post_init__(self):
        if not (np.isfinite(self.pitch_deg) and np.isfinite(self.roll_deg)):
            raise ValueError("calibration estimate must be finite")


@dataclass(frozen=True)
class UprightCheck:
    pitch_variance: float
    roll_variance: float
    passed: bool


def upright_variance_filter(
    estimates: Sequence[CalibrationEstimate], threshold: float = 1.0
) -> UprightCheck:
    """Classify a panorama as upright from per-view pitch/roll estimates.

    Computes population variances of pitch and roll; the panorama fails
    when either variance exceeds the threshold (default 1.0).

    Raises:
        ValueError: with fewer than 2 estimates.
    """
    if len(estimates) < 2:
        raise ValueError("need at least 2 calibration estimates")
    pitches = np.array([e.pitch_deg for e in estimates], dtype=np.float64)
    rolls = np.array([e.roll_deg for e in estimates], dtype=np.float64)
    pv = float(np.var(pitches))
    rv = float(np.var(rolls))
    return UprightCheck(pv, rv, passed=(pv <= threshold and rv <= threshold))
