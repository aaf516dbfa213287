"""Procedural synthetic panorama fixtures with exact depth and masks.

Scenes consist of an enclosing sphere background at a known constant
depth plus floating assets (angular box/disc patches, each at a known
constant radial depth), rendered analytically to equirectangular RGB,
exact depth, and exact per-asset masks. Colors are smooth (band
limited) so resampling-based comparisons stay well conditioned.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from . import imageio
from .erp import PanoramaImage, pixel_to_angles, spherical_to_cartesian
from .layering import AssetMask

__all__ = ["SynthAsset", "SynthScene", "synth_scene", "make_blocking_case"]


@dataclass
class SynthAsset:
    id: int
    kind: str  # "box" (angular rectangle) or "sphere" (angular disc)
    azimuth_deg: float
    elevation_deg: float
    depth: float
    half_width_deg: float
    half_height_deg: float
    color: Tuple[float, float, float]


@dataclass
class SynthScene:
    pano: PanoramaImage
    assets: List[AssetMask]
    label_map: np.ndarray
    params: List[SynthAsset]
    bg_depth: float

    def write(self, directory) -> Dict[str, Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "pano": out / "pano.png",
            "depth": out / "depth.pfm",
            "labels": out / "labels.png",
            "labels_meta": out / "labels.json",
        }
        imageio.save_rgb(paths["pano"], self.pano.rgb)
        imageio.save_pfm(paths["depth"], self.pano.depth)
        imageio.save_label_map(paths["labels"], self.label_map)
        meta = {
            str(a.id): {"category": a.kind, "background": False} for a in self.params
        }
        paths["labels_meta"].write_text(json.dumps(meta, indent=2))
        (out / "scene_params.json").write_text(
            json.dumps({"bg_depth": self.bg_depth, "assets": [asdict(a) for a in self.params]}, indent=2)
        )
        return paths


def _wrap_angle(a: np.ndarray) -> np.ndarray:
    """Wrap radians to (-pi, pi]."""
    return np.mod(a + np.pi, 2 * np.pi) - np.pi


def _background_rgb(theta: np.ndarray, phi: np.ndarray, rng: np.random.Generator):
    p = rng.uniform(0, 2 * np.pi, size=3)
    r = 0.5 + 0.3 * np.sin(theta + p[0]) * np.cos(phi)
    g = 0.5 + 0.3 * np.sin(2 * theta + p[1]) * np.cos(phi)
    b = 0.5 + 0.3 * np.cos(theta + p[2]) * np.sin(phi + 0.5)
    return np.stack([r, g, b], axis=-1)


def synth_scene(
    seed: int = 0,
    n_assets: int = 2,
    width: int = 512,
    height: int = 256,
    bg_depth: float = 10.0,
    depth_range: Tuple[float, float] = (2.5, 6.0),
    size_range_deg: Tuple[float, float] = (12.0, 20.0),
) -> SynthScene:
    """Render an analytic fixture scene to panorama + depth + masks.

    Assets are placed at spread azimuths with alternating elevations and
    distinct depths across depth_range; a fixed seed reproduces the
    fixture bit-identically.
    """
    if width != 2 * height:
        raise ValueError("fixture panorama requires W = 2H")
    if n_assets < 0:
        raise ValueError("asset count must be >= 0")
    rng = np.random.default_rng(seed)

    us, vs = np.meshgrid(np.arange(width), np.arange(height))
    theta, phi = pixel_to_angles(us, vs, width, height)
    rgb = _background_rgb(theta, phi, rng)
    depth = np.full((height, width), float(bg_depth))
    labels = np.zeros((height, width), dtype=np.int32)

    params: List[SynthAsset] = []
    for i in range(n_assets):
        az = 360.0 * i / max(n_assets, 1) + float(rng.uniform(-15.0, 15.0))
        el = float(rng.uniform(8.0, 24.0)) * (1 if i % 2 == 0 else -1)
        if n_assets == 1:
            d = float(np.mean(depth_range))
        else:
            d = depth_range[0] + (depth_range[1] - depth_range[0]) * i / (n_assets - 1)
        d = round(d, 3)
        half_w = float(rng.uniform(*size_range_deg))
        half_h = float(rng.uniform(size_range_deg[0] * 0.7, size_range_deg[1] * 0.8))
        base = 0.25 + 0.5 * rng.uniform(size=3)
        params.append(
            SynthAsset(
                id=i + 1,
                kind="box" if i % 2 == 0 else "sphere",
                azimuth_deg=az % 360.0,
                elevation_deg=el,
                depth=d,
                half_width_deg=half_w,
                half_height_deg=half_h,
                color=tuple(float(c) for c in base),
            )
        )

    # nearest asset wins each pixel
    dirs = spherical_to_cartesian(theta, phi, np.ones_like(theta))
    for asset in sorted(params, key=lambda a: a.depth):
        azr = np.deg2rad(asset.azimuth_deg)
        elr = np.deg2rad(asset.elevation_deg)
        if asset.kind == "box":
            inside = (np.abs(_wrap_angle(theta - azr)) <= np.deg2rad(asset.half_width_deg)) & (
                np.abs(phi - elr) <= np.deg2rad(asset.half_height_deg)
            )
        else:
            center = spherical_to_cartesian(azr, elr, 1.0)
            ang = np.arccos(np.clip(dirs @ center, -1.0, 1.0))
            inside = ang <= np.deg2rad(min(asset.half_width_deg, asset.half_height_deg))
        inside &= labels == 0
        if not inside.any():
            continue
        labels[inside] = asset.id
        depth[inside] = asset.depth
        shade = 0.85 + 0.15 * np.sin(3 * (theta[inside] - azr)) * np.cos(
            2 * (phi[inside] - elr)
        )
        rgb[inside] = np.clip(np.array(asset.color)[None, :] * shade[:, None], 0.0, 1.0)

    visible = [a for a in params if (labels == a.id).any()]
    masks = [
        AssetMask(id=a.id, mask=labels == a.id, category=a.kind, background=False)
        for a in visible
    ]
    return SynthScene(
        pano=PanoramaImage(rgb, depth),
        assets=masks,
        label_map=labels,
        params=visible,
        bg_depth=float(bg_depth),
    )


def make_blocking_case(
    seed: int = 0, width: int = 384, height: int = 192
) -> Dict[str, object]:
    """Fixture reproducing the blocked-asset configuration.

    The background layer's depth is corrupted in a patch in front of
    where the next layer's asset belongs, so base gaussians at depth 2
    block the asset at depth 3. From the panorama center the corruption
    is invisible (radial displacement), so the base layer still
    optimizes cleanly; the blockage only matters when the asset layer
    arrives.
    """
    rng = np.random.default_rng(seed)
    us, vs = np.meshgrid(np.arange(width), np.arange(height))
    theta, phi = pixel_to_angles(us, vs, width, height)
    bg_rgb = _background_rgb(theta, phi, rng)

    asset = SynthAsset(
        id=1, kind="box", azimuth_deg=0.0, elevation_deg=0.0, depth=3.0,
        half_width_deg=18.0, half_height_deg=14.0, color=(0.85, 0.35, 0.2),
    )
    azr, elr = 0.0, 0.0
    asset_mask = (np.abs(_wrap_angle(theta - azr)) <= np.deg2rad(asset.half_width_deg)) & (
        np.abs(phi - elr) <= np.deg2rad(asset.half_height_deg)
    )
    blocked_mask = (np.abs(_wrap_angle(theta - azr)) <= np.deg2rad(asset.half_width_deg * 0.6)) & (
        np.abs(phi - elr) <= np.deg2rad(asset.half_height_deg * 0.6)
    )

    base_depth = np.full((height, width), 10.0)
    base_depth[blocked_mask] = 2.0

    ref_rgb = bg_rgb.copy()
    shade = 0.85 + 0.15 * np.sin(3 * theta[asset_mask]) * np.cos(2 * phi[asset_mask])
    ref_rgb[asset_mask] = np.clip(np.array(asset.color)[None, :] * shade[:, None], 0, 1)
    ref_depth = np.full((height, width), 10.0)
    ref_depth[asset_mask] = asset.depth

    return {
        "base_pano": PanoramaImage(bg_rgb, base_depth),
        "layer_pano": PanoramaImage(ref_rgb, ref_depth),
        "asset_mask": asset_mask,
        "blocked_mask": blocked_mask,
        "asset": asset,
    }
