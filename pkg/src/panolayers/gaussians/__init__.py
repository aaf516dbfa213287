"""Layered 3D Gaussian scene: model, renderer, losses, selector, optimizer."""

from .model import (
    GaussianScene,
    init_gaussians,
    prune_low_opacity,
    read_lpsl,
    serialize_lpsl,
    write_lpsl,
)
from .raster import RasterSettings, RenderOutput, render_equirect, render_pinhole
from .losses import compute_loss, ssim
from .selector import select_active, select_active_bruteforce
from .optimize import (
    SupervisionView,
    TrainConfig,
    build_supervision_views,
    optimize_base,
    optimize_layer,
)

__all__ = [
    "GaussianScene",
    "init_gaussians",
    "prune_low_opacity",
    "serialize_lpsl",
    "write_lpsl",
    "read_lpsl",
    "RasterSettings",
    "RenderOutput",
    "render_pinhole",
    "render_equirect",
    "compute_loss",
    "ssim",
    "select_active",
    "select_active_bruteforce",
    "SupervisionView",
    "TrainConfig",
    "build_supervision_views",
    "optimize_base",
    "optimize_layer",
]
