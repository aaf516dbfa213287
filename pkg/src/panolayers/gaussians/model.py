"""Gaussian scene container, initialization from point clouds, pruning,
and the LPSL binary scene format.

Parameters are stored raw (log-scales, opacity/color logits, unnormalized
quaternions) so optimizers can step them freely; activations are applied
at render and serialization time. The LPSL file stores activated values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from ..pointcloud import PointCloud

__all__ = [
    "GaussianScene",
    "init_gaussians",
    "prune_low_opacity",
    "serialize_lpsl",
    "write_lpsl",
    "read_lpsl",
]

LPSL_MAGIC = b"LPSL"
LPSL_VERSION = 1

_RECORD_DTYPE = np.dtype(
    [
        ("mean", "<f4", (3,)),
        ("scale", "<f4", (3,)),
        ("rotation", "<f4", (4,)),
        ("opacity", "<f4"),
        ("color", "<f4", (3,)),
        ("layer_id", "<u4"),
        ("frozen", "u1"),
    ]
)

INIT_OPACITY = 0.1
SCALE_MIN = 1e-4
SCALE_MAX_DEPTH_FRACTION = 0.1
_LOGIT_EPS = 1.0 / 512.0


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p):
    return np.log(p) - np.log1p(-p)


@dataclass
class GaussianScene:
    """Structure-of-arrays collection of 3D Gaussians around o = (0,0,0).

    means (N,3); log_scales (N,3); rotations (N,4) raw quaternions
    (w,x,y,z), normalized on use; opacity_logits (N,); color_logits
    (N,3); layer_ids (N,) int32; frozen (N,) bool.
    """

    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    color_logits: np.ndarray
    layer_ids: np.ndarray
    frozen: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = self.means.shape[0]
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.color_logits = np.asarray(self.color_logits, dtype=np.float64).reshape(n, 3)
        self.layer_ids = np.asarray(self.layer_ids, dtype=np.int32).reshape(n)
        self.frozen = np.asarray(self.frozen, dtype=bool).reshape(n)

    def __len__(self) -> int:
        return self.means.shape[0]

    @classmethod
    def empty(cls) -> "GaussianScene":
        return cls(
            np.zeros((0, 3)),
            np.zeros((0, 3)),
            np.zeros((0, 4)),
            np.zeros(0),
            np.zeros((0, 3)),
            np.zeros(0, np.int32),
            np.zeros(0, bool),
        )

    # Activated views -------------------------------------------------------

    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def opacities(self) -> np.ndarray:
        return _sigmoid(self.opacity_logits)

    def colors(self) -> np.ndarray:
        return _sigmoid(self.color_logits)

    def unit_rotations(self) -> np.ndarray:
        n = np.linalg.norm(self.rotations, axis=1, keepdims=True)
        return self.rotations / n

    def layer_ranges(self) -> dict:
        """Map layer id -> gaussian count."""
        ids, counts = np.unique(self.layer_ids, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}

    # Structure edits -------------------------------------------------------

    def append(self, other: "GaussianScene") -> "GaussianScene":
        return GaussianScene(
            np.concatenate([self.means, other.means]),
            np.concatenate([self.log_scales, other.log_scales]),
            np.concatenate([self.rotations, other.rotations]),
            np.concatenate([self.opacity_logits, other.opacity_logits]),
            np.concatenate([self.color_logits, other.color_logits]),
            np.concatenate([self.layer_ids, other.layer_ids]),
            np.concatenate([self.frozen, other.frozen]),
        )

    def subset(self, index) -> "GaussianScene":
        return GaussianScene(
            self.means[index],
            self.log_scales[index],
            self.rotations[index],
            self.opacity_logits[index],
            self.color_logits[index],
            self.layer_ids[index],
            self.frozen[index],
        )

    def copy(self) -> "GaussianScene":
        return self.subset(slice(None))

    def freeze_all(self) -> None:
        self.frozen[:] = True


def init_gaussians(
    pc: PointCloud, layer_id: Optional[int] = None, opacity: float = INIT_OPACITY
) -> GaussianScene:
    """One active Gaussian per point.

    Mean and color are copied from the point; rotation is identity,
    opacity starts at 0.1, and the isotropic scale is the distance to
    the nearest neighboring point clamped to [1e-4, 0.1 * depth]. A
    single-point cloud falls back to 0.01 * depth.

    Raises:
        ValueError: on an empty cloud.
    """
    n = len(pc)
    if n == 0:
        raise ValueError("cannot initialize gaussians from an empty cloud")
    depths = np.linalg.norm(pc.positions, axis=1)
    if n >= 2:
        tree = cKDTree(pc.positions)
        nn = tree.query(pc.positions, k=2)[0][:, 1]
    else:
        nn = 0.01 * depths
    scale = np.clip(nn, SCALE_MIN, SCALE_MAX_DEPTH_FRACTION * depths)
    scale = np.maximum(scale, SCALE_MIN)  # depth < 1e-3 keeps the floor
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    colors = np.clip(pc.colors, _LOGIT_EPS, 1.0 - _LOGIT_EPS)
    layer = pc.layer_ids if layer_id is None else np.full(n, layer_id, np.int32)
    return GaussianScene(
        means=pc.positions.copy(),
        log_scales=np.log(np.repeat(scale[:, None], 3, axis=1)),
        rotations=rot,
        opacity_logits=np.full(n, _logit(opacity)),
        color_logits=_logit(colors),
        layer_ids=layer,
        frozen=np.zeros(n, bool),
    )


def prune_low_opacity(scene: GaussianScene, threshold: float = 0.005) -> GaussianScene:
    """Drop active gaussians with opacity below threshold; frozen ones stay.

    Raises:
        ValueError: unless 0 < threshold < 1.
    """
    if not (0.0 < threshold < 1.0):
        raise ValueError("prune threshold must lie in (0, 1)")
    keep = scene.frozen | (scene.opacities() >= threshold)
    return scene.subset(np.nonzero(keep)[0])


# ---------------------------------------------------------------------------
# LPSL binary format
# ---------------------------------------------------------------------------


def _records(scene: GaussianScene) -> np.ndarray:
    n = len(scene)
    rec = np.empty(n, dtype=_RECORD_DTYPE)
    rec["mean"] = scene.means.astype(np.float32)
    rec["scale"] = np.clip(scene.scales(), 1e-12, 1e12).astype(np.float32)
    rec["rotation"] = scene.unit_rotations().astype(np.float32)
    opac = np.clip(scene.opacities(), 1e-7, 1.0 - 1e-7).astype(np.float32)
    rec["opacity"] = np.clip(opac, np.float32(1e-7), np.float32(1.0 - 1e-7))
    col = np.clip(scene.colors(), 0.0, 1.0).astype(np.float32)
    rec["color"] = np.clip(col, 0.0, 1.0)
    rec["layer_id"] = scene.layer_ids.astype(np.uint32)
    rec["frozen"] = scene.frozen.astype(np.uint8)
    return rec


def serialize_lpsl(scene: GaussianScene) -> bytes:
    """Scene -> LPSL bytes: magic, version u32, count u32, packed records."""
    header = LPSL_MAGIC + struct.pack("<II", LPSL_VERSION, len(scene))
    return header + _records(scene).tobytes()


def frozen_record_bytes(scene: GaussianScene) -> bytes:
    """Packed records of the frozen gaussians only (immutability checks)."""
    return _records(scene)[scene.frozen].tobytes()


def write_lpsl(path, scene: GaussianScene) -> None:
    with open(path, "wb") as f:
        f.write(serialize_lpsl(scene))


def read_lpsl(path_or_bytes) -> GaussianScene:
    """Parse an LPSL file back into a scene (activations inverted).

    Raises:
        ValueError: on bad magic, unsupported version, or truncation.
    """
    if isinstance(path_or_bytes, (bytes, bytearray)):
        data = bytes(path_or_bytes)
    else:
        with open(path_or_bytes, "rb") as f:
            data = f.read()
    if len(data) < 12 or data[:4] != LPSL_MAGIC:
        raise ValueError("not an LPSL scene file (bad magic)")
    version, count = struct.unpack("<II", data[4:12])
    if version != LPSL_VERSION:
        raise ValueError(f"unsupported LPSL version {version}")
    expected = 12 + count * _RECORD_DTYPE.itemsize
    if len(data) < expected:
        raise ValueError(
            f"truncated LPSL file: need {expected} bytes, got {len(data)}"
        )
    rec = np.frombuffer(data[12:expected], dtype=_RECORD_DTYPE, count=count)
    scales = np.maximum(rec["scale"].astype(np.float64), 1e-12)
    opac = np.clip(rec["opacity"].astype(np.float64), 1e-7, 1.0 - 1e-7)
    colors = np.clip(rec["color"].astype(np.float64), _LOGIT_EPS, 1.0 - _LOGIT_EPS)
    return GaussianScene(
        means=rec["mean"].astype(np.float64),
        log_scales=np.log(scales),
        rotations=rec["rotation"].astype(np.float64),
        opacity_logits=_logit(opac),
        color_logits=_logit(colors),
        layer_ids=rec["layer_id"].astype(np.int32),
        frozen=rec["frozen"].astype(bool),
    )
