"""Training loss: (1 - lambda) * L1 + lambda * D-SSIM, with exact
analytic gradients with respect to the rendered image.

SSIM uses the standard 11x11 gaussian window (sigma 1.5), sample
statistics over the valid (fully windowed) region, and data range 1.0,
matching the common reference implementations. D-SSIM = (1 - SSIM) / 2.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

__all__ = ["ssim", "compute_loss", "gaussian_window"]

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
C1 = (0.01 * 1.0) ** 2
C2 = (0.03 * 1.0) ** 2
DEFAULT_DSSIM_WEIGHT = 0.2


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    """Normalized 1-D gaussian window."""
    r = (size - 1) // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _correlate_valid(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with a symmetric 1-D window."""
    k = w.size
    h, width = img.shape
    out = np.zeros((h, width - k + 1))
    for i in range(k):
        out += w[i] * img[:, i : width - k + 1 + i]
    out2 = np.zeros((h - k + 1, width - k + 1))
    for i in range(k):
        out2 += w[i] * out[i : h - k + 1 + i, :]
    return out2


def _correlate_adjoint(grad: np.ndarray, w: np.ndarray, shape) -> np.ndarray:
    """Adjoint of valid correlation: scatter window-weighted gradients
    back to full-size pixel space (full convolution with the window)."""
    k = w.size
    h, width = shape
    tmp = np.zeros((grad.shape[0], width))
    for i in range(k):
        tmp[:, i : i + grad.shape[1]] += w[i] * grad
    out = np.zeros((h, width))
    for i in range(k):
        out[i : i + grad.shape[0], :] += w[i] * tmp
    return out


def _ssim_channel(x: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Per-window SSIM map and the intermediates needed for gradients."""
    mx = _correlate_valid(x, w)
    my = _correlate_valid(y, w)
    mxx = _correlate_valid(x * x, w)
    myy = _correlate_valid(y * y, w)
    mxy = _correlate_valid(x * y, w)
    sx = mxx - mx * mx
    sy = myy - my * my
    sxy = mxy - mx * my
    a1 = 2 * mx * my + C1
    a2 = 2 * sxy + C2
    b1 = mx * mx + my * my + C1
    b2 = sx + sy + C2
    s = (a1 * a2) / (b1 * b2)
    return s, (mx, my, a1, a2, b1, b2)


def ssim(img1: np.ndarray, img2: np.ndarray) -> float:
    """Mean SSIM over the valid region (channels averaged)."""
    img1 = np.asarray(img1, dtype=np.float64)
    img2 = np.asarray(img2, dtype=np.float64)
    if img1.shape != img2.shape:
        raise ValueError("image shapes differ")
    if img1.ndim == 2:
        img1 = img1[..., None]
        img2 = img2[..., None]
    if img1.shape[0] < WINDOW_SIZE or img1.shape[1] < WINDOW_SIZE:
        raise ValueError(f"images must be at least {WINDOW_SIZE}px on each side")
    w = gaussian_window()
    vals = []
    for c in range(img1.shape[2]):
        s, _ = _ssim_channel(img1[..., c], img2[..., c], w)
        vals.append(s.mean())
    return float(np.mean(vals))


def compute_loss(
    render: np.ndarray,
    target: np.ndarray,
    mask: Optional[np.ndarray] = None,
    dssim_weight: float = DEFAULT_DSSIM_WEIGHT,
) -> Tuple[float, np.ndarray]:
    """Loss value and its exact gradient with respect to the render.

    loss = (1 - w) * L1 + w * (1 - SSIM) / 2. With a mask, both terms
    restrict to masked pixels (SSIM windows whose center pixel is
    masked). Raises ValueError on dimension mismatch.
    """
    render = np.asarray(render, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if render.shape != target.shape:
        raise ValueError(f"render shape {render.shape} != target shape {target.shape}")
    squeeze = render.ndim == 2
    if squeeze:
        render = render[..., None]
        target = target[..., None]
    h, width, nch = render.shape
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (h, width):
            raise ValueError("mask shape must match images")
        if not mask.any():
            raise ValueError("mask selects no pixels")

    grad = np.zeros_like(render)

    # L1 term
    diff = render - target
    if mask is None:
        l1 = float(np.abs(diff).mean())
        grad += (1.0 - dssim_weight) * np.sign(diff) / diff.size
    else:
        count = int(mask.sum()) * nch
        l1 = float(np.abs(diff[mask]).sum() / count)
        g = np.zeros_like(render)
        g[mask] = np.sign(diff[mask]) / count
        grad += (1.0 - dssim_weight) * g

    # D-SSIM term
    pad = (WINDOW_SIZE - 1) // 2
    dssim = 0.0
    if dssim_weight != 0.0 and (h < WINDOW_SIZE or width < WINDOW_SIZE):
        raise ValueError(f"images must be at least {WINDOW_SIZE}px for the D-SSIM term")
    if dssim_weight != 0.0:
        w = gaussian_window()
        if mask is None:
            valid_mask = None
            n_valid = (h - WINDOW_SIZE + 1) * (width - WINDOW_SIZE + 1)
        else:
            valid_mask = mask[pad : h - pad, pad : width - pad]
            n_valid = int(valid_mask.sum())
        if n_valid > 0:
            ssim_sum = 0.0
            for c in range(nch):
                x = render[..., c]
                y = target[..., c]
                s, (mx, my, a1, a2, b1, b2) = _ssim_channel(x, y, w)
                if valid_mask is None:
                    ssim_sum += s.mean()
                    dlds = np.full(s.shape, 1.0 / (n_valid * nch))
                else:
                    ssim_sum += s[valid_mask].sum() / n_valid
                    dlds = np.where(valid_mask, 1.0 / (n_valid * nch), 0.0)
                # d(mean SSIM)/dx through the window statistics
                ds_da1 = a2 / (b1 * b2)
                ds_da2 = a1 / (b1 * b2)
                ds_db1 = -s / b1
                ds_db2 = -s / b2
                g_mu = dlds * (
                    ds_da1 * 2 * my + ds_db1 * 2 * mx + ds_da2 * 2 * (-my) + ds_db2 * (-2 * mx)
                )
                g_x2 = dlds * ds_db2
                g_xy = dlds * ds_da2 * 2
                dx = (
                    _correlate_adjoint(g_mu, w, (h, width))
                    + 2 * x * _correlate_adjoint(g_x2, w, (h, width))
                    + y * _correlate_adjoint(g_xy, w, (h, width))
                )
                # chain rule for loss = w * (1 - SSIM)/2
                grad[..., c] += dssim_weight * (-0.5) * dx
            dssim = (1.0 - ssim_sum / nch) / 2.0

    loss = (1.0 - dssim_weight) * l1 + dssim_weight * dssim
    if squeeze:
        grad = grad[..., 0]
    return float(loss), grad
