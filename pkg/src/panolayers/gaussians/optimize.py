"""Gaussian scene optimization: base/layer training schedule with Adam,
per-layer freezing, selector-driven re-activation, and periodic pruning.

The base stage optimizes every gaussian of the background scene; each
layer stage appends gaussians for the newly revealed asset points,
re-activates frozen gaussians flagged by the selector, and optimizes
only that active set. Frozen parameters are never written.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..erp import PanoramaImage, PinholeCamera, extract_perspective_view
from ..pointcloud import GridHashParams, PointCloud
from .losses import compute_loss
from .model import GaussianScene, init_gaussians, prune_low_opacity
from .raster import RasterSettings, render_backward, render_forward
from .selector import select_active, select_active_bruteforce

logger = logging.getLogger(__name__)

__all__ = [
    "SupervisionView",
    "TrainConfig",
    "build_supervision_views",
    "optimize_base",
    "optimize_layer",
    "LayerReport",
]


@dataclass
class SupervisionView:
    camera: PinholeCamera
    target: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters (documented defaults; every value
    overridable through the pipeline config)."""

    iterations_base: int = 3000
    iterations_layer: int = 2000
    dssim_weight: float = 0.2
    lr_means: float = 1.6e-4  # multiplied by scene extent
    lr_log_scales: float = 5e-3
    lr_rotations: float = 1e-3
    lr_opacities: float = 0.05
    lr_colors: float = 2.5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15
    prune_interval: int = 500
    prune_opacity: float = 0.005
    selector_mode: str = "grid"  # grid | brute | off
    selector_tol_deg: float = 0.5
    beta3: float = 10.0
    extra_views: int = 8
    extra_fov_deg: float = 60.0
    seed: int = 0
    raster: RasterSettings = field(default_factory=RasterSettings)


@dataclass
class LayerReport:
    layer_id: int
    newly_added: int
    activated: int
    pruned: int
    final_loss: float
    loss_history: List[float] = field(default_factory=list)


def build_supervision_views(
    pano_rgb: np.ndarray,
    face_size: Optional[int] = None,
    extra_views: int = 8,
    extra_fov_deg: float = 60.0,
    seed: int = 0,
) -> List[SupervisionView]:
    """Supervision set: 6 cube faces at 90 degrees plus seeded extra
    views at 60 degrees, all resampled from the layer panorama."""
    h, w = pano_rgb.shape[:2]
    face_size = face_size or max(64, h // 2)
    pano = PanoramaImage(np.clip(pano_rgb, 0.0, 1.0))
    views = []
    for az, el in ((0, 0), (90, 0), (180, 0), (270, 0), (0, 90), (0, -90)):
        cam = PinholeCamera.from_angles(az, el, 90.0, face_size, face_size)
        views.append(SupervisionView(cam, extract_perspective_view(pano, cam)))
    rng = np.random.default_rng(seed)
    for _ in range(extra_views):
        az = float(rng.uniform(0.0, 360.0))
        el = float(rng.uniform(-35.0, 35.0))
        cam = PinholeCamera.from_angles(az, el, extra_fov_deg, face_size, face_size)
        views.append(SupervisionView(cam, extract_perspective_view(pano, cam)))
    return views


class _Adam:
    """Per-array Adam state over the active rows."""

    def __init__(self, shape, lr, b1, b2, eps):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.lr = lr
        self.b1, self.b2, self.eps = b1, b2, eps
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def keep_rows(self, keep: np.ndarray) -> None:
        self.m = self.m[keep]
        self.v = self.v[keep]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def scene_extent(scene: GaussianScene) -> float:
    """Robust scene radius used to scale the position learning rate."""
    if len(scene) == 0:
        return 1.0
    return float(np.percentile(np.linalg.norm(scene.means, axis=1), 95.0))


def _optimize_active(
    scene: GaussianScene,
    views: Sequence[SupervisionView],
    iterations: int,
    config: TrainConfig,
    stage_seed: int,
) -> Tuple[GaussianScene, List[float], int]:
    """Optimize the non-frozen gaussians of the scene in place.

    Returns (scene, per-iteration losses, pruned count). The scene
    object identity may change when pruning compacts the arrays; frozen
    rows are never modified.
    """
    if iterations <= 0 or len(scene) == 0 or not views:
        return scene, [], 0
    active = np.nonzero(~scene.frozen)[0]
    if active.size == 0:
        return scene, [], 0

    extent = scene_extent(scene)
    opt = {
        "means": _Adam((active.size, 3), config.lr_means * extent,
                       config.adam_beta1, config.adam_beta2, config.adam_eps),
        "log_scales": _Adam((active.size, 3), config.lr_log_scales,
                            config.adam_beta1, config.adam_beta2, config.adam_eps),
        "rotations": _Adam((active.size, 4), config.lr_rotations,
                           config.adam_beta1, config.adam_beta2, config.adam_eps),
        "opacity_logits": _Adam((active.size,), config.lr_opacities,
                                config.adam_beta1, config.adam_beta2, config.adam_eps),
        "color_logits": _Adam((active.size, 3), config.lr_colors,
                              config.adam_beta1, config.adam_beta2, config.adam_eps),
    }

    rng = np.random.default_rng(stage_seed)
    order = rng.permutation(len(views))
    cursor = 0

    losses: List[float] = []
    pruned_total = 0
    for it in range(iterations):
        if cursor == len(order):
            order = rng.permutation(len(views))
            cursor = 0
        view = views[order[cursor]]
        cursor += 1

        out, ctx = render_forward(scene, view.camera, settings=config.raster)
        loss, d_color_img = compute_loss(
            out.color, view.target, dssim_weight=config.dssim_weight
        )
        losses.append(loss)
        grads = render_backward(ctx, d_color_img)

        o = _sigmoid(scene.opacity_logits[active])
        c = _sigmoid(scene.color_logits[active])
        g_opacity = grads["opacities"][active] * o * (1 - o)
        g_color = grads["colors"][active] * c * (1 - c)

        scene.means[active] -= opt["means"].step(grads["means"][active])
        scene.log_scales[active] -= opt["log_scales"].step(grads["log_scales"][active])
        scene.rotations[active] -= opt["rotations"].step(grads["rotations"][active])
        scene.opacity_logits[active] -= opt["opacity_logits"].step(g_opacity)
        scene.color_logits[active] -= opt["color_logits"].step(g_color)

        if config.prune_interval and (it + 1) % config.prune_interval == 0 and it + 1 < iterations:
            keep = scene.frozen | (scene.opacities() >= config.prune_opacity)
            if not keep.all():
                pruned_total += int((~keep).sum())
                keep_active = keep[active]
                for state in opt.values():
                    state.keep_rows(keep_active)
                scene = scene.subset(np.nonzero(keep)[0])
                active = np.nonzero(~scene.frozen)[0]
    return scene, losses, pruned_total


def optimize_base(
    scene: GaussianScene,
    views: Sequence[SupervisionView],
    iterations: Optional[int] = None,
    config: Optional[TrainConfig] = None,
) -> Tuple[GaussianScene, LayerReport]:
    """Optimize the base (background) gaussians and freeze them."""
    config = config or TrainConfig()
    iters = config.iterations_base if iterations is None else iterations
    n0 = len(scene)
    scene, losses, pruned = _optimize_active(scene, views, iters, config, config.seed)
    scene.freeze_all()
    report = LayerReport(
        layer_id=0,
        newly_added=n0,
        activated=0,
        pruned=pruned,
        final_loss=losses[-1] if losses else 0.0,
        loss_history=losses,
    )
    return scene, report


def optimize_layer(
    scene: GaussianScene,
    new_cloud: PointCloud,
    views: Sequence[SupervisionView],
    layer_id: int,
    iterations: Optional[int] = None,
    config: Optional[TrainConfig] = None,
) -> Tuple[GaussianScene, LayerReport]:
    """Insert a layer's asset gaussians and optimize the active set.

    New gaussians come from the masked asset points; frozen gaussians
    flagged by the selector are re-activated; everything else remains
    frozen and bit-identical. An empty asset cloud leaves the scene
    unchanged.
    """
    config = config or TrainConfig()
    iters = config.iterations_layer if iterations is None else iterations
    if len(new_cloud) == 0:
        return scene, LayerReport(layer_id, 0, 0, 0, 0.0, [])

    if config.selector_mode == "grid":
        activated = select_active(
            scene.means,
            new_cloud.positions,
            GridHashParams(beta3=config.beta3),
            config.selector_tol_deg,
        )
    elif config.selector_mode == "brute":
        activated = select_active_bruteforce(
            scene.means, new_cloud.positions, config.selector_tol_deg
        )
    elif config.selector_mode == "off":
        activated = np.zeros(len(scene), dtype=bool)
    else:
        raise ValueError(f"unknown selector mode: {config.selector_mode}")
    activated &= scene.frozen

    fresh = init_gaussians(new_cloud, layer_id=layer_id)
    n_prior = len(scene)
    scene = scene.append(fresh)
    scene.frozen[:n_prior][activated] = False

    scene, losses, pruned = _optimize_active(
        scene, views, iters, config, config.seed + 1000 + layer_id
    )
    scene.freeze_all()
    report = LayerReport(
        layer_id=layer_id,
        newly_added=len(fresh),
        activated=int(activated.sum()),
        pruned=pruned,
        final_loss=losses[-1] if losses else 0.0,
        loss_history=losses,
    )
    return scene, report
