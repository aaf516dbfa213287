"""Rendering quality metrics: PSNR and SSIM over frame pairs."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

from . import imageio
from .gaussians.losses import ssim

__all__ = ["psnr", "compute_metrics"]

PSNR_CLAMP_DB = 99.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB on [0, 1] floats; identical images clamp at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CLAMP_DB
    return float(min(PSNR_CLAMP_DB, -10.0 * np.log10(mse)))


def _load_if_path(item) -> np.ndarray:
    if isinstance(item, (str, Path)):
        return imageio.load_rgb(item)
    return np.asarray(item, dtype=np.float64)


def compute_metrics(
    renders: Sequence[Union[str, Path, np.ndarray]],
    references: Sequence[Union[str, Path, np.ndarray]],
) -> Dict:
    """Per-frame and mean PSNR/SSIM between two aligned frame sequences.

    Raises:
        ValueError: on count or dimension mismatch.
    """
    if len(renders) != len(references):
        raise ValueError(
            f"frame count mismatch: {len(renders)} renders vs {len(references)} references"
        )
    if len(renders) == 0:
        raise ValueError("no frames to compare")
    frames: List[Dict] = []
    for i, (r, t) in enumerate(zip(renders, references)):
        ra = _load_if_path(r)
        ta = _load_if_path(t)
        if ra.shape != ta.shape:
            raise ValueError(f"frame {i} dimension mismatch: {ra.shape} vs {ta.shape}")
        frames.append({"frame": i, "psnr": psnr(ra, ta), "ssim": ssim(ra, ta)})
    return {
        "frames": frames,
        "mean_psnr": float(np.mean([f["psnr"] for f in frames])),
        "mean_ssim": float(np.mean([f["ssim"] for f in frames])),
    }
