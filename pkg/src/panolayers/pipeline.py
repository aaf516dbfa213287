"""End-to-end pipeline: input ingestion, layer stack construction, scene
optimization, trajectory rendering, and artifact export.

A fixed config + seed makes the whole build deterministic: rerunning
produces a bit-identical LPSL scene file.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import yaml

from . import imageio
from .erp import PanoramaImage
from .fixtures import synth_scene
from .gaussians.model import (
    GaussianScene,
    init_gaussians,
    read_lpsl,
    write_lpsl,
)
from .gaussians.optimize import (
    TrainConfig,
    build_supervision_views,
    optimize_base,
    optimize_layer,
)
from .gaussians.raster import RasterSettings, render_pinhole
from .layering import LayerStack, build_layer_stack, load_asset_masks
from .pointcloud import (
    DEFAULT_BETA1,
    DEFAULT_BETA2,
    DEFAULT_N_MAX,
    PointCloud,
    downsample,
    lift_panorama,
    remove_stretched_outliers,
    save_ply,
)
from .trajectory import Trajectory

logger = logging.getLogger(__name__)

__all__ = ["PipelineConfig", "BuildResult", "run_build", "render_trajectory_frames", "export_scene"]

BYTES_PER_GAUSSIAN_ESTIMATE = 14 * 8 * 4  # params + grads + two Adam moments


@dataclass
class PipelineConfig:
    """Build configuration; every field maps to a YAML key."""

    input_pano: str = ""
    input_depth: str = ""
    depth_scale: Optional[float] = None
    input_labels: Optional[str] = None
    input_labels_meta: Optional[str] = None
    external_rgb_dir: Optional[str] = None
    external_depth_dir: Optional[str] = None
    out_dir: str = "build"
    n_layers: int = 3
    extend_radius: Optional[int] = None
    beta1: float = DEFAULT_BETA1
    beta2: int = DEFAULT_BETA2
    filter_radius: Optional[float] = None  # default: 0.02 x median depth
    beta3: float = 10.0
    n_max: int = DEFAULT_N_MAX
    iterations_base: int = 3000
    iterations_layer: int = 2000
    dssim_weight: float = 0.2
    lr_means: float = 1.6e-4
    lr_log_scales: float = 5e-3
    lr_rotations: float = 1e-3
    lr_opacities: float = 0.05
    lr_colors: float = 2.5e-3
    prune_interval: int = 500
    prune_opacity: float = 0.005
    selector: str = "grid"
    selector_tol_deg: float = 0.5
    supervision_face_size: Optional[int] = None
    extra_views: int = 8
    seed: int = 0

    def validate(self) -> None:
        if not self.input_pano or not self.input_depth:
            raise ValueError("config requires input_pano and input_depth")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if self.beta1 <= 0 or self.beta2 < 0 or self.beta3 <= 0:
            raise ValueError("beta parameters out of range")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if not (0.0 <= self.dssim_weight <= 1.0):
            raise ValueError("dssim_weight must lie in [0, 1]")
        if self.selector not in ("grid", "brute", "off"):
            raise ValueError("selector must be grid, brute or off")
        if self.iterations_base < 0 or self.iterations_layer < 0:
            raise ValueError("iteration counts must be >= 0")

    @classmethod
    def from_yaml(cls, path) -> "PipelineConfig":
        data = yaml.safe_load(Path(path).read_text()) or {}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_yaml(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(dataclasses.asdict(self), sort_keys=True))

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            iterations_base=self.iterations_base,
            iterations_layer=self.iterations_layer,
            dssim_weight=self.dssim_weight,
            lr_means=self.lr_means,
            lr_log_scales=self.lr_log_scales,
            lr_rotations=self.lr_rotations,
            lr_opacities=self.lr_opacities,
            lr_colors=self.lr_colors,
            prune_interval=self.prune_interval,
            prune_opacity=self.prune_opacity,
            selector_mode=self.selector,
            selector_tol_deg=self.selector_tol_deg,
            beta3=self.beta3,
            extra_views=self.extra_views,
            seed=self.seed,
        )


@dataclass
class BuildResult:
    scene_path: Path
    stack_dir: Path
    manifest_path: Path
    run_log_path: Path
    cloud_paths: List[Path] = field(default_factory=list)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_inputs(config: PipelineConfig):
    rgb = imageio.load_rgb(config.input_pano)
    depth = imageio.load_depth(config.input_depth, scale=config.depth_scale)
    pano = PanoramaImage(rgb, depth)
    assets = []
    if config.input_labels:
        if not config.input_labels_meta:
            raise ValueError("input_labels requires input_labels_meta sidecar")
        assets = load_asset_masks(config.input_labels, config.input_labels_meta)
    return pano, assets


def _load_external(directory: Optional[str], kind: str) -> Dict[int, np.ndarray]:
    """Collect layer_{l}_rgb.png / layer_{l}_depth.pfm overrides."""
    if not directory:
        return {}
    out: Dict[int, np.ndarray] = {}
    for p in sorted(Path(directory).glob(f"layer_*_{kind}.*")):
        l = int(p.stem.split("_")[1])
        if kind == "rgb":
            out[l] = imageio.load_rgb(p)
        else:
            out[l] = imageio.load_pfm(p)
    return out


def _prepare_cloud(
    rgb: np.ndarray,
    depth: np.ndarray,
    mask: Optional[np.ndarray],
    layer_id: int,
    config: PipelineConfig,
) -> PointCloud:
    cloud = lift_panorama(rgb, depth, mask=mask, layer_id=layer_id)
    if len(cloud) == 0:
        return cloud
    radius = config.filter_radius
    if radius is None:
        radius = 0.02 * float(np.median(np.linalg.norm(cloud.positions, axis=1)))
    filtered = remove_stretched_outliers(cloud, config.beta1, config.beta2, radius)
    if len(filtered) < 0.01 * len(cloud):
        logger.warning(
            "outlier filter kept %d of %d points at layer %d; "
            "beta1=%g may be mismatched to the scene scale",
            len(filtered), len(cloud), layer_id, config.beta1,
        )
    return downsample(filtered, config.n_max, seed=config.seed + layer_id)


def run_build(config: PipelineConfig) -> BuildResult:
    """Run the full pipeline: stack, clouds, optimization, export.

    Stage order: stack construction strictly precedes optimization; the
    base (layer 0) optimizes first, then layers near-ward.
    """
    config.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    timings: Dict[str, float] = {}
    t0 = time.perf_counter()
    pano, assets = _load_inputs(config)
    external_rgb = _load_external(config.external_rgb_dir, "rgb")
    external_depth = _load_external(config.external_depth_dir, "depth")
    timings["load_inputs"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    stack = build_layer_stack(
        pano,
        assets,
        config.n_layers,
        extend_radius=config.extend_radius,
        external_rgb=external_rgb,
        external_depth=external_depth,
    )
    stack_dir = out / "stack"
    stack.save(stack_dir)
    timings["layer_stack"] = time.perf_counter() - t0

    n_assets = stack.n_asset_layers
    train = config.train_config()
    face_size = config.supervision_face_size or max(64, pano.height // 2)

    reports = []
    cloud_paths: List[Path] = []

    t0 = time.perf_counter()
    base_cloud = _prepare_cloud(stack.rgbs[0], stack.depths[0], None, 0, config)
    if len(base_cloud) == 0:
        raise ValueError("base point cloud is empty after filtering; check beta1/beta2")
    p = out / "cloud_layer_0.ply"
    save_ply(base_cloud, p)
    cloud_paths.append(p)
    timings["cloud_layer_0"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    scene = init_gaussians(base_cloud, layer_id=0)
    views = build_supervision_views(
        stack.rgbs[0], face_size, train.extra_views, train.extra_fov_deg, config.seed
    )
    scene, report = optimize_base(scene, views, config=train)
    reports.append(report)
    timings["optimize_layer_0"] = time.perf_counter() - t0
    logger.info("layer 0: %d gaussians, final loss %.4f", len(scene), report.final_loss)

    for l in range(1, n_assets + 1):
        t0 = time.perf_counter()
        mask = stack.masks[l - 1].mask
        cloud = _prepare_cloud(stack.rgbs[l], stack.depths[l], mask, l, config)
        p = out / f"cloud_layer_{l}.ply"
        save_ply(cloud, p)
        cloud_paths.append(p)
        timings[f"cloud_layer_{l}"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        views = build_supervision_views(
            stack.rgbs[l], face_size, train.extra_views, train.extra_fov_deg, config.seed
        )
        scene, report = optimize_layer(scene, cloud, views, l, config=train)
        reports.append(report)
        timings[f"optimize_layer_{l}"] = time.perf_counter() - t0
        logger.info(
            "layer %d: +%d gaussians, %d re-activated, final loss %.4f",
            l, report.newly_added, report.activated, report.final_loss,
        )

    scene_path = out / "scene.lpsl"
    write_lpsl(scene_path, scene)

    running = 0
    memory_rows = []
    for r in reports:
        running += r.newly_added - r.pruned
        memory_rows.append(
            {
                "layer": r.layer_id,
                "newly_added": r.newly_added,
                "activated": r.activated,
                "pruned": r.pruned,
                "estimated_mb": round(running * BYTES_PER_GAUSSIAN_ESTIMATE / 2**20, 2),
            }
        )

    manifest = {
        "format": "lpsl",
        "version": 1,
        "n_asset_layers": n_assets,
        "layer_count": n_assets + 1,
        "gaussian_count": len(scene),
        "layer_gaussians": memory_rows,
        "training": dataclasses.asdict(config),
        "input_hashes": {
            "pano": _sha256(config.input_pano),
            "depth": _sha256(config.input_depth),
            **({"labels": _sha256(config.input_labels)} if config.input_labels else {}),
        },
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))

    run_log = {
        "stage_seconds": {k: round(v, 3) for k, v in timings.items()},
        "stage_order": list(timings.keys()),
        "final_losses": {f"layer_{r.layer_id}": r.final_loss for r in reports},
        "peak_memory_estimate_mb": max((m["estimated_mb"] for m in memory_rows), default=0.0),
    }
    run_log_path = out / "run_log.json"
    run_log_path.write_text(json.dumps(run_log, indent=2))

    return BuildResult(scene_path, stack_dir, manifest_path, run_log_path, cloud_paths)


def render_trajectory_frames(
    scene_path,
    trajectory: Trajectory,
    out_dir,
    width: Optional[int] = None,
    height: Optional[int] = None,
    settings: Optional[RasterSettings] = None,
) -> List[Path]:
    """Render one PNG per pose plus an alpha-coverage CSV.

    The CSV reports the fraction of pixels with alpha < 0.5 per frame
    (the hole metric).
    """
    scene = read_lpsl(scene_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    rows = []
    for i, cam in enumerate(trajectory.cameras):
        if width or height:
            cam = dataclasses.replace(
                cam, width=width or cam.width, height=height or cam.height
            )
        render = render_pinhole(scene, cam, settings=settings)
        p = out / f"frame_{i:04d}.png"
        imageio.save_rgb(p, render.color)
        paths.append(p)
        rows.append((i, float(np.mean(render.alpha < 0.5))))
    with open(out / "coverage.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "hole_fraction"])
        writer.writerows(rows)
    return paths


def export_scene(build_dir, out_dir) -> List[Path]:
    """Copy the viewer-facing artifacts (scene.lpsl + manifests)."""
    src = Path(build_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exported = []
    for name in ("scene.lpsl", "manifest.json"):
        p = src / name
        if not p.exists():
            raise FileNotFoundError(f"missing build artifact: {p}")
        (out / name).write_bytes(p.read_bytes())
        exported.append(out / name)
    stack_manifest = src / "stack" / "stack.json"
    if stack_manifest.exists():
        (out / "stack.json").write_bytes(stack_manifest.read_bytes())
        exported.append(out / "stack.json")
    return exported


def write_synth_fixture(out_dir, seed: int = 0, n_assets: int = 2,
                        width: int = 512, height: int = 256) -> PipelineConfig:
    """Generate a synthetic fixture plus a ready-to-run build config."""
    out = Path(out_dir)
    scene = synth_scene(seed=seed, n_assets=n_assets, width=width, height=height)
    paths = scene.write(out)
    # beta1 tuned to the fixture's metric scale: three times the
    # densest lifted point spacing at the background depth.
    beta1 = 3.0 * 2.0 * np.pi * scene.bg_depth / width
    config = PipelineConfig(
        input_pano=str(paths["pano"]),
        input_depth=str(paths["depth"]),
        input_labels=str(paths["labels"]),
        input_labels_meta=str(paths["labels_meta"]),
        out_dir=str(out / "build"),
        n_layers=min(3, max(n_assets, 0)),
        beta1=round(float(beta1), 6),
        seed=seed,
    )
    config.to_yaml(out / "config.yaml")
    return config
