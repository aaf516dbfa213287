"""Image file I/O: 8-bit PNG/JPEG color, 16-bit PNG depth and label maps,
and 32-bit float PFM depth."""

from __future__ import annotations

import re
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

PathLike = Union[str, Path]


def load_rgb(path: PathLike) -> np.ndarray:
    """Load an 8-bit PNG/JPEG as (H, W, 3) float64 in [0, 1]."""
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def save_rgb(path: PathLike, rgb: np.ndarray) -> None:
    """Save (H, W, 3) floats in [0, 1] as 8-bit PNG."""
    arr = np.clip(np.asarray(rgb), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def save_pfm(path: PathLike, data: np.ndarray) -> None:
    """Write a single-channel float32 PFM (little-endian, bottom-up rows)."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError("PFM writer expects a single-channel image")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(arr).astype("<f4").tobytes())


def load_pfm(path: PathLike) -> np.ndarray:
    """Read a single-channel PFM into (H, W) float64."""
    with open(path, "rb") as f:
        header = f.readline().rstrip()
        if header != b"Pf":
            raise ValueError(f"not a grayscale PFM file: {path}")
        dims = f.readline().decode("ascii")
        m = re.match(r"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not m:
            raise ValueError(f"malformed PFM dimensions line: {dims!r}")
        w, h = int(m.group(1)), int(m.group(2))
        scale = float(f.readline().decode("ascii").strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(), dtype=dtype, count=w * h)
        if data.size != w * h:
            raise ValueError(f"truncated PFM data in {path}")
    return np.flipud(data.reshape(h, w)).astype(np.float64)


def save_depth_png16(path: PathLike, depth: np.ndarray, scale: float) -> None:
    """Save metric depth as 16-bit PNG with raw = round(meters * scale)."""
    raw = np.round(np.asarray(depth, dtype=np.float64) * scale)
    if np.any(raw < 0) or np.any(raw > 65535):
        raise ValueError("depth out of 16-bit range at this scale")
    img = Image.fromarray(raw.astype(np.uint16))
    img.save(path)


def load_depth(path: PathLike, scale: Optional[float] = None) -> np.ndarray:
    """Load depth from PFM (float32) or 16-bit PNG (meters = raw / scale)."""
    p = Path(path)
    if p.suffix.lower() == ".pfm":
        return load_pfm(p)
    if p.suffix.lower() == ".png":
        if scale is None:
            raise ValueError("16-bit PNG depth requires a declared scale factor")
        raw = np.asarray(Image.open(p), dtype=np.float64)
        return raw / scale
    raise ValueError(f"unsupported depth format: {p.suffix}")


def save_label_map(path: PathLike, labels: np.ndarray) -> None:
    """Save an integer label map as 16-bit PNG."""
    arr = np.asarray(labels)
    if np.any(arr < 0) or np.any(arr > 65535):
        raise ValueError("labels out of 16-bit range")
    Image.fromarray(arr.astype(np.uint16)).save(path)


def load_label_map(path: PathLike) -> np.ndarray:
    """Load a 16-bit PNG label map as (H, W) int32."""
    return np.asarray(Image.open(path), dtype=np.int32)


def save_mask(path: PathLike, mask: np.ndarray) -> None:
    """Save a boolean mask as 8-bit PNG (0/255)."""
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path)


def load_mask(path: PathLike) -> np.ndarray:
    """Load an 8-bit PNG mask as boolean (nonzero = True)."""
    return np.asarray(Image.open(path).convert("L")) > 127
