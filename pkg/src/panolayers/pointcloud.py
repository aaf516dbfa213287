"""Point clouds lifted from layered panoramas.

Lifts panorama pixels to 3D points through the equirectangular angle
maps, removes stretched outliers with the two-pass distance/grid
heuristic, hashes points into a signed log-spaced grid, and caps cloud
size by seeded stratified downsampling. Clouds round-trip through
binary little-endian PLY.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .erp import pixel_to_angles, spherical_to_cartesian

__all__ = [
    "PointCloud",
    "GridHashParams",
    "lift_panorama",
    "remove_stretched_outliers",
    "grid_hash",
    "downsample",
    "save_ply",
    "load_ply",
]

DEFAULT_BETA1 = 0.0001
DEFAULT_BETA2 = 4
DEFAULT_N_MAX = 2_000_000


@dataclass
class PointCloud:
    """3D points with colors, layer provenance and source pixels."""

    positions: np.ndarray
    colors: np.ndarray
    layer_ids: np.ndarray
    source_pixels: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        self.layer_ids = np.asarray(self.layer_ids, dtype=np.int32).reshape(n)
        self.source_pixels = np.asarray(self.source_pixels, dtype=np.int32).reshape(n, 2)
        if n and not np.all(np.isfinite(self.positions)):
            raise ValueError("point positions must be finite")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def subset(self, index) -> "PointCloud":
        return PointCloud(
            self.positions[index],
            self.colors[index],
            self.layer_ids[index],
            self.source_pixels[index],
        )

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(
            np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, np.int32), np.zeros((0, 2), np.int32)
        )

    @classmethod
    def concatenate(cls, clouds) -> "PointCloud":
        clouds = list(clouds)
        if not clouds:
            return cls.empty()
        return cls(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.colors for c in clouds]),
            np.concatenate([c.layer_ids for c in clouds]),
            np.concatenate([c.source_pixels for c in clouds]),
        )


@dataclass
class GridHashParams:
    """Parameters of the log-spaced 3D grid hash."""

    beta3: float = 10.0
    signed: bool = True

    def __post_init__(self):
        if self.beta3 <= 0:
            raise ValueError("beta3 must be > 0")


def lift_panorama(
    rgb: np.ndarray,
    depth: np.ndarray,
    mask: Optional[np.ndarray] = None,
    layer_id: int = 0,
) -> PointCloud:
    """Lift panorama pixels to 3D points around the origin.

    One point per selected pixel at
    spherical_to_cartesian(pixel_to_angles(u, v), depth[v, u]); colors
    and (u, v) provenance are copied.

    Raises:
        ValueError: if depth is missing/invalid on any selected pixel.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    if mask is None:
        mask = np.ones((h, w), dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
    vs, us = np.nonzero(mask)
    if vs.size == 0:
        return PointCloud.empty()
    d = depth[vs, us]
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        raise ValueError("depth missing or invalid on selected pixels")
    theta, phi = pixel_to_angles(us, vs, w, h)
    positions = spherical_to_cartesian(theta, phi, d)
    colors = rgb[vs, us]
    return PointCloud(
        positions,
        colors,
        np.full(vs.size, layer_id, dtype=np.int32),
        np.stack([us, vs], axis=1).astype(np.int32),
    )


def remove_stretched_outliers(
    pc: PointCloud, beta1: float = DEFAULT_BETA1, beta2: int = DEFAULT_BETA2, radius: float = 0.02
) -> PointCloud:
    """Drop stretched outlier points in two passes.

    Pass 1 removes points whose nearest-neighbor distance exceeds beta1
    (a lone point has no neighbor and is removed). Pass 2 maps the
    survivors into a uniform grid of cell size ``radius`` and removes
    all points in cells holding fewer than beta2 points.
    """
    if beta1 <= 0:
        raise ValueError("beta1 must be > 0")
    if beta2 < 0:
        raise ValueError("beta2 must be >= 0")
    if radius <= 0:
        raise ValueError("radius must be > 0")
    n = len(pc)
    if n == 0:
        return pc.subset(np.zeros(0, dtype=np.int64))
    if n == 1:
        return pc.subset(np.zeros(0, dtype=np.int64))

    tree = cKDTree(pc.positions)
    nn_dist = tree.query(pc.positions, k=2)[0][:, 1]
    keep1 = np.nonzero(nn_dist <= beta1)[0]
    if keep1.size == 0:
        return pc.subset(keep1)

    cells = np.floor(pc.positions[keep1] / radius).astype(np.int64)
    _, inverse, counts = np.unique(cells, axis=0, return_inverse=True, return_counts=True)
    keep2 = keep1[counts[inverse] >= beta2]
    return pc.subset(keep2)


def grid_hash(vectors, params: Optional[GridHashParams] = None) -> np.ndarray:
    """Hash vector components into log-spaced grid indices.

    Per component: index = sign(c) * ceil(beta3 * ln(|c| + 1)), the
    odd-symmetric extension of the nonnegative log-grid map. With
    ``signed=False`` the map is applied literally and negative
    components are rejected.
    """
    params = params or GridHashParams()
    c = np.asarray(vectors, dtype=np.float64)
    if not params.signed:
        if np.any(c < 0):
            raise ValueError("unsigned grid hash requires nonnegative components")
        return np.ceil(params.beta3 * np.log1p(c)).astype(np.int64)
    return (np.sign(c) * np.ceil(params.beta3 * np.log1p(np.abs(c)))).astype(np.int64)


def downsample(pc: PointCloud, n_max: int = DEFAULT_N_MAX, seed: int = 0) -> PointCloud:
    """Cap a cloud at n_max points by seeded uniform subsampling.

    Identity when the cloud is already small enough. Sampling is
    stratified by layer id so per-layer proportions are preserved to
    within one point; the result is a subset of the input in input
    order.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    n = len(pc)
    if n <= n_max:
        return pc
    rng = np.random.default_rng(seed)
    layers = np.unique(pc.layer_ids)
    exact = np.array([np.count_nonzero(pc.layer_ids == l) for l in layers], dtype=np.float64)
    exact *= n_max / n
    quotas = np.floor(exact).astype(np.int64)
    remainder = n_max - int(quotas.sum())
    if remainder > 0:
        frac_order = np.argsort(-(exact - quotas), kind="stable")
        quotas[frac_order[:remainder]] += 1
    chosen = []
    for l, q in zip(layers, quotas):
        idx = np.nonzero(pc.layer_ids == l)[0]
        if q >= idx.size:
            chosen.append(idx)
        else:
            chosen.append(rng.choice(idx, size=int(q), replace=False))
    keep = np.sort(np.concatenate(chosen))
    return pc.subset(keep)


# ---------------------------------------------------------------------------
# PLY serialization
# ---------------------------------------------------------------------------

_PLY_DTYPE = np.dtype(
    [
        ("x", "<f4"),
        ("y", "<f4"),
        ("z", "<f4"),
        ("red", "u1"),
        ("green", "u1"),
        ("blue", "u1"),
        ("layer_id", "<i4"),
    ]
)


def save_ply(pc: PointCloud, path) -> None:
    """Write a binary little-endian PLY with x,y,z,red,green,blue,layer_id.

    Colors are quantized to 8 bits; source-pixel provenance is not part
    of the format and is dropped.
    """
    n = len(pc)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "property int layer_id\n"
        "end_header\n"
    )
    rec = np.empty(n, dtype=_PLY_DTYPE)
    rec["x"] = pc.positions[:, 0].astype(np.float32)
    rec["y"] = pc.positions[:, 1].astype(np.float32)
    rec["z"] = pc.positions[:, 2].astype(np.float32)
    rgb8 = np.clip(np.round(pc.colors * 255.0), 0, 255).astype(np.uint8)
    rec["red"], rec["green"], rec["blue"] = rgb8[:, 0], rgb8[:, 1], rgb8[:, 2]
    rec["layer_id"] = pc.layer_ids
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(rec.tobytes())


def load_ply(path) -> PointCloud:
    """Read a PLY written by :func:`save_ply`.

    Source pixels are not stored in the format and load as (-1, -1).
    """
    with open(Path(path), "rb") as f:
        magic = f.readline().strip()
        if magic != b"ply":
            raise ValueError(f"not a PLY file: {path}")
        n = None
        props = []
        while True:
            line = f.readline()
            if not line:
                raise ValueError("unterminated PLY header")
            line = line.strip()
            if line == b"end_header":
                break
            parts = line.split()
            if parts[0] == b"format" and parts[1] != b"binary_little_endian":
                raise ValueError("only binary little-endian PLY is supported")
            if parts[0] == b"element" and parts[1] == b"vertex":
                n = int(parts[2])
            elif parts[0] == b"property":
                props.append(parts[2].decode())
        expected = ["x", "y", "z", "red", "green", "blue", "layer_id"]
        if n is None or props != expected:
            raise ValueError(f"unsupported PLY layout: {props}")
        rec = np.frombuffer(f.read(n * _PLY_DTYPE.itemsize), dtype=_PLY_DTYPE, count=n)
    positions = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    colors = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1).astype(np.float64) / 255.0
    return PointCloud(
        positions, colors, rec["layer_id"].astype(np.int32), np.full((n, 2), -1, np.int32)
    )
