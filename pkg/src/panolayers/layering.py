"""Depth-layer decomposition of a reference panorama.

Assigns each segmented asset a depth statistic, clusters assets into N
depth groups with an exact 1-D K-Means, merges group masks into layer
masks (far to near), completes each layer panorama, and restores
per-layer depth. Generative inpainting is replaced by externally
supplied completions or a deterministic harmonic (Laplace) fill.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import splu

from . import imageio
from .erp import PanoramaImage

logger = logging.getLogger(__name__)

__all__ = [
    "AssetMask",
    "LayerMask",
    "LayerStack",
    "asset_depth_statistic",
    "kmeans_cluster_assets",
    "merge_layer_masks",
    "extend_layer_mask",
    "harmonic_fill",
    "complete_layer",
    "align_layer_depth",
    "build_layer_stack",
    "load_asset_masks",
    "default_extend_radius",
]


@dataclass
class AssetMask:
    """One segmented scene asset: binary mask plus category metadata."""

    id: int
    mask: np.ndarray
    category: str = ""
    background: bool = False

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if not self.mask.any():
            raise ValueError(f"asset {self.id} has an empty mask")


@dataclass
class LayerMask:
    """Union of the asset masks assigned to one depth layer."""

    index: int
    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if not self.mask.any():
            raise ValueError(f"layer {self.index} has an empty mask")


@dataclass
class LayerStack:
    """N+1 completed panoramas with aligned depths, ordered far to near.

    layers[l] / depths[l] for l = 0..N; layer N is the reference
    panorama. masks[l] for l = 0..N-1 are the merged (unextended) layer
    masks; extended_masks are the dilated variants actually filled.
    """

    rgbs: List[np.ndarray]
    depths: List[np.ndarray]
    masks: List[LayerMask]
    extended_masks: List[np.ndarray] = field(default_factory=list)
    layer_stats: List[float] = field(default_factory=list)
    extend_radius: int = 0

    @property
    def n_asset_layers(self) -> int:
        return len(self.masks)

    def __len__(self) -> int:
        return len(self.rgbs)

    def save(self, directory) -> None:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        for l, (rgb, depth) in enumerate(zip(self.rgbs, self.depths)):
            imageio.save_rgb(out / f"layer_{l}_rgb.png", rgb)
            imageio.save_pfm(out / f"layer_{l}_depth.pfm", depth)
        for m in self.masks:
            imageio.save_mask(out / f"layer_{m.index}_mask.png", m.mask)
        for l, em in enumerate(self.extended_masks):
            imageio.save_mask(out / f"layer_{l}_mask_extended.png", em)
        manifest = {
            "n_asset_layers": self.n_asset_layers,
            "layer_count": len(self.rgbs),
            "ordering": "far_to_near",
            "depth_format": "pfm_float32",
            "layer_stats": self.layer_stats,
            "extend_radius": self.extend_radius,
        }
        (out / "stack.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "LayerStack":
        src = Path(directory)
        manifest = json.loads((src / "stack.json").read_text())
        count = manifest["layer_count"]
        rgbs = [imageio.load_rgb(src / f"layer_{l}_rgb.png") for l in range(count)]
        depths = [imageio.load_pfm(src / f"layer_{l}_depth.pfm") for l in range(count)]
        masks = [
            LayerMask(l, imageio.load_mask(src / f"layer_{l}_mask.png"))
            for l in range(manifest["n_asset_layers"])
        ]
        extended = []
        for l in range(manifest["n_asset_layers"]):
            p = src / f"layer_{l}_mask_extended.png"
            if p.exists():
                extended.append(imageio.load_mask(p))
        return cls(
            rgbs=rgbs,
            depths=depths,
            masks=masks,
            extended_masks=extended,
            layer_stats=list(manifest.get("layer_stats", [])),
            extend_radius=int(manifest.get("extend_radius", 0)),
        )


def load_asset_masks(label_path, sidecar_path) -> List[AssetMask]:
    """Build asset masks from a 16-bit label map and its JSON sidecar.

    The sidecar maps label id (as string) to {"category": str,
    "background": bool}. Label 0 is unlabeled and ignored.
    """
    labels = imageio.load_label_map(label_path)
    meta = json.loads(Path(sidecar_path).read_text())
    assets = []
    for key in sorted(meta, key=int):
        lid = int(key)
        if lid == 0:
            continue
        mask = labels == lid
        if not mask.any():
            logger.warning("label %d listed in sidecar but absent from map", lid)
            continue
        info = meta[key]
        assets.append(
            AssetMask(
                id=lid,
                mask=mask,
                category=info.get("category", ""),
                background=bool(info.get("background", False)),
            )
        )
    return assets


# ---------------------------------------------------------------------------
# Depth statistic and clustering
# ---------------------------------------------------------------------------


def asset_depth_statistic(mask: np.ndarray, depth: np.ndarray) -> float:
    """75th percentile (nearest-rank) of depth inside the mask.

    Nearest-rank: the ceil(0.75 * n)-th smallest masked depth value.

    Raises:
        ValueError: if the mask is empty or depth is undefined on it.
    """
    mask = np.asarray(mask, dtype=bool)
    values = np.asarray(depth, dtype=np.float64)[mask]
    if values.size == 0:
        raise ValueError("depth statistic of an empty mask")
    if np.any(~np.isfinite(values)) or np.any(values <= 0):
        raise ValueError("depth undefined (non-finite or <= 0) inside mask")
    values = np.sort(values)
    rank = math.ceil(0.75 * values.size)
    return float(values[rank - 1])


def kmeans_cluster_assets(depth_values: Sequence[float], n_clusters: int):
    """Exact 1-D K-Means over asset depth values.

    Solves the within-cluster sum-of-squares minimum by dynamic
    programming over the sorted values (optimal 1-D clusters are
    contiguous). Clusters are relabeled so cluster 0 has the largest
    mean depth. Returns (labels, n_used) where labels follow the input
    order; n_used < n_clusters when there are fewer assets than
    requested clusters (a warning is logged).
    """
    values = np.asarray(depth_values, dtype=np.float64)
    n = values.size
    if n_clusters < 1:
        raise ValueError("cluster count must be >= 1")
    if n == 0:
        raise ValueError("no depth values to cluster")
    k = n_clusters
    if n < k:
        logger.warning("only %d assets for %d clusters; reducing to %d", n, k, n)
        k = n

    order = np.argsort(values, kind="stable")
    s = values[order]
    prefix = np.concatenate([[0.0], np.cumsum(s)])
    prefix_sq = np.concatenate([[0.0], np.cumsum(s * s)])

    def seg_cost(i: int, j: int) -> float:
        # SSE of s[i:j] about its mean
        cnt = j - i
        tot = prefix[j] - prefix[i]
        return (prefix_sq[j] - prefix_sq[i]) - tot * tot / cnt

    inf = float("inf")
    cost = np.full((k + 1, n + 1), inf)
    split = np.zeros((k + 1, n + 1), dtype=np.int64)
    cost[0, 0] = 0.0
    for kk in range(1, k + 1):
        for j in range(kk, n + 1):
            best, best_i = inf, kk - 1
            for i in range(kk - 1, j):
                c = cost[kk - 1, i] + seg_cost(i, j)
                if c < best:
                    best, best_i = c, i
            cost[kk, j] = best
            split[kk, j] = best_i

    bounds = [n]
    j = n
    for kk in range(k, 0, -1):
        j = int(split[kk, j])
        bounds.append(j)
    bounds.reverse()  # 0 = bounds[0] < ... < bounds[k] = n

    labels_sorted = np.zeros(n, dtype=np.int64)
    means = np.zeros(k)
    for c in range(k):
        lo, hi = bounds[c], bounds[c + 1]
        labels_sorted[lo:hi] = c
        means[c] = s[lo:hi].mean()

    # relabel so cluster 0 is farthest (largest mean depth)
    rank = np.argsort(-means, kind="stable")
    remap = np.empty(k, dtype=np.int64)
    remap[rank] = np.arange(k)
    labels = np.empty(n, dtype=np.int64)
    labels[order] = remap[labels_sorted]
    return labels, k


def merge_layer_masks(assets: Sequence[AssetMask], labels) -> List[LayerMask]:
    """Union asset masks per cluster, ordered far to near.

    Background-category assets are excluded from every layer. Clusters
    left empty by the exclusion are dropped and the remaining layers
    renumbered.
    """
    labels = np.asarray(labels)
    if len(assets) != labels.size:
        raise ValueError("one label per asset required")
    n_clusters = int(labels.max()) + 1 if labels.size else 0
    merged: List[LayerMask] = []
    index = 0
    for c in range(n_clusters):
        mask = None
        for asset, lab in zip(assets, labels):
            if lab != c or asset.background:
                continue
            mask = asset.mask.copy() if mask is None else (mask | asset.mask)
        if mask is not None and mask.any():
            merged.append(LayerMask(index, mask))
            index += 1
    return merged


# ---------------------------------------------------------------------------
# Mask extension and completion
# ---------------------------------------------------------------------------


def default_extend_radius(width: int) -> int:
    """Dilation radius: 8 px at 1024-width, scaled proportionally."""
    return max(1, round(8 * width / 1024))


def extend_layer_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Dilate a mask by a disk, wrapping horizontally."""
    mask = np.asarray(mask, dtype=bool)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return mask.copy()
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    disk = (yy * yy + xx * xx) <= r * r
    padded = np.concatenate([mask[:, -r:], mask, mask[:, :r]], axis=1)
    dilated = ndimage.binary_dilation(padded, structure=disk)
    out = dilated[:, r : r + mask.shape[1]].copy()
    out[:, :r] |= dilated[:, r + mask.shape[1] :]
    out[:, -r:] |= dilated[:, :r]
    return out


def harmonic_fill(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Fill masked pixels with the discrete harmonic extension of the
    unmasked boundary (Dirichlet Laplace solve, horizontal wraparound,
    vertical boundary rows use the reduced 3-neighbor stencil).

    Unmasked pixels are returned bit-exactly. Raises ValueError when the
    mask covers the whole image (no boundary to fill from).
    """
    mask = np.asarray(mask, dtype=bool)
    arr = np.asarray(values, dtype=np.float64)
    if mask.shape != arr.shape[:2]:
        raise ValueError("mask shape must match image")
    if not mask.any():
        return arr.copy()
    if mask.all():
        raise ValueError("mask covers the entire image; no boundary to fill from")

    h, w = mask.shape
    idx = -np.ones((h, w), dtype=np.int64)
    ys, xs = np.nonzero(mask)
    n = ys.size
    idx[ys, xs] = np.arange(n)

    channels = arr if arr.ndim == 3 else arr[..., None]
    nch = channels.shape[2]
    rows, cols, data = [], [], []
    rhs = np.zeros((n, nch))
    for k in range(n):
        y, x = ys[k], xs[k]
        deg = 0
        for dy, dx in ((0, -1), (0, 1), (-1, 0), (1, 0)):
            ny, nx = y + dy, x + dx
            if ny < 0 or ny >= h:
                continue  # vertical clamp: missing neighbor drops from stencil
            nx %= w  # horizontal wraparound
            deg += 1
            j = idx[ny, nx]
            if j >= 0:
                rows.append(k)
                cols.append(j)
                data.append(-1.0)
            else:
                rhs[k] += channels[ny, nx]
        rows.append(k)
        cols.append(k)
        data.append(float(deg))

    mat = csr_matrix((data, (rows, cols)), shape=(n, n)).tocsc()
    solver = splu(mat)
    out = arr.copy()
    if arr.ndim == 3:
        for c in range(nch):
            out[ys, xs, c] = solver.solve(rhs[:, c])
    else:
        out[ys, xs] = solver.solve(rhs[:, 0])
    return out


def complete_layer(
    rgb: np.ndarray, mask: np.ndarray, external: Optional[np.ndarray] = None
) -> np.ndarray:
    """Complete masked panorama content.

    Unmasked pixels are copied bit-exactly. Masked pixels come from the
    external completion when supplied, otherwise from the deterministic
    harmonic fill.

    Raises:
        ValueError: if the external image's dimensions mismatch.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if external is not None:
        external = np.asarray(external, dtype=np.float64)
        if external.shape != rgb.shape:
            raise ValueError(
                f"external completion shape {external.shape} != panorama {rgb.shape}"
            )
        out = rgb.copy()
        out[mask] = external[mask]
        return out
    if not mask.any():
        return rgb.copy()
    return harmonic_fill(rgb, mask)


def align_layer_depth(
    mask: np.ndarray, depth_prev: np.ndarray, occluder_stat: float
) -> np.ndarray:
    """Restore layer depth behind an occluder.

    Outside the mask the nearer layer's depth is kept bit-exactly;
    inside, depth is the harmonic fill of the boundary depths, clamped
    to >= the occluding layer's depth statistic (revealed content lies
    at or behind its occluder).

    Raises:
        ValueError: if the mask covers the entire panorama.
    """
    mask = np.asarray(mask, dtype=bool)
    depth_prev = np.asarray(depth_prev, dtype=np.float64)
    if not mask.any():
        return depth_prev.copy()
    out = harmonic_fill(depth_prev, mask)
    out[mask] = np.maximum(out[mask], occluder_stat)
    return out


# ---------------------------------------------------------------------------
# Stack construction
# ---------------------------------------------------------------------------


def build_layer_stack(
    pano: PanoramaImage,
    assets: Sequence[AssetMask],
    n_layers: int,
    extend_radius: Optional[int] = None,
    external_rgb: Optional[Dict[int, np.ndarray]] = None,
    external_depth: Optional[Dict[int, np.ndarray]] = None,
) -> LayerStack:
    """Decompose a reference panorama into an N+1 layer stack.

    Runs statistic -> cluster -> merge -> extend -> complete -> align
    for layers N-1 down to 0; layer N is the reference. external_rgb /
    external_depth map layer index to precomputed completions that
    replace the deterministic fill for that layer.
    """
    if pano.depth is None:
        raise ValueError("reference panorama requires a depth map")
    external_rgb = external_rgb or {}
    external_depth = external_depth or {}
    radius = (
        default_extend_radius(pano.width) if extend_radius is None else int(extend_radius)
    )

    foreground = [a for a in assets if not a.background]
    if n_layers <= 0 or not foreground:
        return LayerStack(
            rgbs=[np.array(pano.rgb)],
            depths=[np.array(pano.depth)],
            masks=[],
            extended_masks=[],
            layer_stats=[],
            extend_radius=radius,
        )

    stats = [asset_depth_statistic(a.mask, pano.depth) for a in foreground]
    labels, _ = kmeans_cluster_assets(stats, n_layers)
    masks = merge_layer_masks(foreground, labels)
    n = len(masks)

    layer_stats = [asset_depth_statistic(m.mask, pano.depth) for m in masks]

    rgbs: List[np.ndarray] = [np.array(pano.rgb)]
    depths: List[np.ndarray] = [np.array(pano.depth)]
    extended: List[np.ndarray] = [np.zeros_like(masks[0].mask)] * n
    for l in range(n - 1, -1, -1):
        ext = extend_layer_mask(masks[l].mask, radius)
        extended[l] = ext
        rgb_l = complete_layer(rgbs[0], ext, external_rgb.get(l))
        if l in external_depth:
            depth_l = np.asarray(external_depth[l], dtype=np.float64)
            if depth_l.shape != depths[0].shape:
                raise ValueError(f"external depth for layer {l} has wrong shape")
            depth_l = depth_l.copy()
        else:
            depth_l = align_layer_depth(ext, depths[0], layer_stats[l])
        rgbs.insert(0, rgb_l)
        depths.insert(0, depth_l)

    return LayerStack(
        rgbs=rgbs,
        depths=depths,
        masks=masks,
        extended_masks=extended,
        layer_stats=layer_stats,
        extend_radius=radius,
    )
