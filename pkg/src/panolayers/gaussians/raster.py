"""Deterministic CPU splatting renderer with analytic gradients.

Forward pass follows the standard 3D Gaussian splatting scheme: each
gaussian is projected to a 2D gaussian through the perspective-affine
(EWA) approximation, splats are sorted front to back per 16x16 tile,
and pixels composite with alpha blending. The backward pass replays
each pixel's compositing sequence and accumulates exact analytic
gradients with respect to every gaussian parameter.

The skip thresholds (alpha_min, transmittance_min, radius_multiplier)
are performance approximations; RasterSettings(exact=True) disables
them so gradients are exact for finite-difference verification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from numba import njit

from ..erp import PinholeCamera, pixel_to_angles, spherical_to_cartesian
from .model import GaussianScene

__all__ = [
    "RasterSettings",
    "RenderOutput",
    "render_pinhole",
    "render_equirect",
    "render_forward",
    "render_backward",
    "cube_face_cameras",
]


@dataclass(frozen=True)
class RasterSettings:
    """Renderer configuration. exact=True disables every skip threshold."""

    tile_size: int = 16
    blur: float = 0.3
    near: float = 0.01
    alpha_clamp: float = 0.995
    alpha_min: float = 1.0 / 255.0
    transmittance_min: float = 1e-4
    radius_multiplier: float = 3.0
    jacobian_clamp: float = 1.3
    exact: bool = False

    def effective(self) -> "RasterSettings":
        if not self.exact:
            return self
        return replace(self, alpha_min=0.0, transmittance_min=0.0)


@dataclass
class RenderOutput:
    """color (H, W, 3), accumulated alpha (H, W), expected depth (H, W)."""

    color: np.ndarray
    alpha: np.ndarray
    depth: np.ndarray


# ---------------------------------------------------------------------------
# Projection kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _project_forward(
    means, log_scales, rots, V, campos, fx, fy, cx, cy, limx, limy, blur, near,
    out_p, out_conic, out_depth, out_radius, out_valid,
):
    n = means.shape[0]
    for i in range(n):
        wx = means[i, 0] - campos[0]
        wy = means[i, 1] - campos[1]
        wz = means[i, 2] - campos[2]
        tx = V[0, 0] * wx + V[0, 1] * wy + V[0, 2] * wz
        ty = V[1, 0] * wx + V[1, 1] * wy + V[1, 2] * wz
        tz = V[2, 0] * wx + V[2, 1] * wy + V[2, 2] * wz
        if tz <= near:
            out_valid[i] = False
            continue

        out_p[i, 0] = fx * tx / tz + cx
        out_p[i, 1] = fy * ty / tz + cy
        out_depth[i] = tz

        txz = tx / tz
        tyz = ty / tz
        txc = min(limx, max(-limx, txz)) * tz
        tyc = min(limy, max(-limy, tyz)) * tz
        j00 = fx / tz
        j02 = -fx * txc / (tz * tz)
        j11 = fy / tz
        j12 = -fy * tyc / (tz * tz)

        a00 = j00 * V[0, 0] + j02 * V[2, 0]
        a01 = j00 * V[0, 1] + j02 * V[2, 1]
        a02 = j00 * V[0, 2] + j02 * V[2, 2]
        a10 = j11 * V[1, 0] + j12 * V[2, 0]
        a11_ = j11 * V[1, 1] + j12 * V[2, 1]
        a12_ = j11 * V[1, 2] + j12 * V[2, 2]

        qw, qx, qy, qz = rots[i, 0], rots[i, 1], rots[i, 2], rots[i, 3]
        qn = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        w, x, y, z = qw / qn, qx / qn, qy / qn, qz / qn
        r00 = 1 - 2 * (y * y + z * z)
        r01 = 2 * (x * y - w * z)
        r02 = 2 * (x * z + w * y)
        r10 = 2 * (x * y + w * z)
        r11 = 1 - 2 * (x * x + z * z)
        r12 = 2 * (y * z - w * x)
        r20 = 2 * (x * z - w * y)
        r21 = 2 * (y * z + w * x)
        r22 = 1 - 2 * (x * x + y * y)

        s0 = math.exp(log_scales[i, 0])
        s1 = math.exp(log_scales[i, 1])
        s2 = math.exp(log_scales[i, 2])

        # B = A R diag(s), Sigma' = B B^T + blur I
        b00 = (a00 * r00 + a01 * r10 + a02 * r20) * s0
        b01 = (a00 * r01 + a01 * r11 + a02 * r21) * s1
        b02 = (a00 * r02 + a01 * r12 + a02 * r22) * s2
        b10 = (a10 * r00 + a11_ * r10 + a12_ * r20) * s0
        b11 = (a10 * r01 + a11_ * r11 + a12_ * r21) * s1
        b12 = (a10 * r02 + a11_ * r12 + a12_ * r22) * s2

        c11 = b00 * b00 + b01 * b01 + b02 * b02 + blur
        c12 = b00 * b10 + b01 * b11 + b02 * b12
        c22 = b10 * b10 + b11 * b11 + b12 * b12 + blur
        det = c11 * c22 - c12 * c12
        if det <= 0:
            out_valid[i] = False
            continue
        out_conic[i, 0] = c22 / det
        out_conic[i, 1] = -c12 / det
        out_conic[i, 2] = c11 / det
        mid = 0.5 * (c11 + c22)
        lam = mid + math.sqrt(max(0.0, mid * mid - det))
        out_radius[i] = math.ceil(3.0 * math.sqrt(lam))
        out_valid[i] = True


@njit(cache=True)
def _project_backward(
    means, log_scales, rots, V, campos, fx, fy, cx, cy, limx, limy, blur, near,
    valid, d_p, d_conic,
    out_d_means, out_d_log_scales, out_d_rots,
):
    n = means.shape[0]
    for i in range(n):
        if not valid[i]:
            continue
        wx = means[i, 0] - campos[0]
        wy = means[i, 1] - campos[1]
        wz = means[i, 2] - campos[2]
        tx = V[0, 0] * wx + V[0, 1] * wy + V[0, 2] * wz
        ty = V[1, 0] * wx + V[1, 1] * wy + V[1, 2] * wz
        tz = V[2, 0] * wx + V[2, 1] * wy + V[2, 2] * wz

        txz = tx / tz
        tyz = ty / tz
        clx = txz > limx or txz < -limx
        cly = tyz > limy or tyz < -limy
        txc = min(limx, max(-limx, txz)) * tz
        tyc = min(limy, max(-limy, tyz)) * tz
        j00 = fx / tz
        j02 = -fx * txc / (tz * tz)
        j11 = fy / tz
        j12 = -fy * tyc / (tz * tz)

        a00 = j00 * V[0, 0] + j02 * V[2, 0]
        a01 = j00 * V[0, 1] + j02 * V[2, 1]
        a02 = j00 * V[0, 2] + j02 * V[2, 2]
        a10 = j11 * V[1, 0] + j12 * V[2, 0]
        a11_ = j11 * V[1, 1] + j12 * V[2, 1]
        a12_ = j11 * V[1, 2] + j12 * V[2, 2]

        qw, qx, qy, qz = rots[i, 0], rots[i, 1], rots[i, 2], rots[i, 3]
        qn = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        w, x, y, z = qw / qn, qx / qn, qy / qn, qz / qn
        r00 = 1 - 2 * (y * y + z * z)
        r01 = 2 * (x * y - w * z)
        r02 = 2 * (x * z + w * y)
        r10 = 2 * (x * y + w * z)
        r11 = 1 - 2 * (x * x + z * z)
        r12 = 2 * (y * z - w * x)
        r20 = 2 * (x * z - w * y)
        r21 = 2 * (y * z + w * x)
        r22 = 1 - 2 * (x * x + y * y)

        s0 = math.exp(log_scales[i, 0])
        s1 = math.exp(log_scales[i, 1])
        s2 = math.exp(log_scales[i, 2])
        m00, m01, m02 = r00 * s0, r01 * s1, r02 * s2
        m10, m11, m12 = r10 * s0, r11 * s1, r12 * s2
        m20, m21, m22 = r20 * s0, r21 * s1, r22 * s2

        b00 = a00 * m00 + a01 * m10 + a02 * m20
        b01 = a00 * m01 + a01 * m11 + a02 * m21
        b02 = a00 * m02 + a01 * m12 + a02 * m22
        b10 = a10 * m00 + a11_ * m10 + a12_ * m20
        b11 = a10 * m01 + a11_ * m11 + a12_ * m21
        b12 = a10 * m02 + a11_ * m12 + a12_ * m22

        c11 = b00 * b00 + b01 * b01 + b02 * b02 + blur
        c12 = b00 * b10 + b01 * b11 + b02 * b12
        c22 = b10 * b10 + b11 * b11 + b12 * b12 + blur
        det = c11 * c22 - c12 * c12
        inv_det2 = 1.0 / (det * det)

        ga, gb, gc = d_conic[i, 0], d_conic[i, 1], d_conic[i, 2]
        # conic = (c22, -c12, c11)/det
        g11 = (ga * (-c22 * c22) + gb * (c12 * c22) + gc * (-c12 * c12)) * inv_det2
        g22 = (ga * (-c12 * c12) + gb * (c12 * c11) + gc * (-c11 * c11)) * inv_det2
        g12 = (
            ga * (2 * c12 * c22) + gc * (2 * c12 * c11)
        ) * inv_det2 + gb * (-1.0 / det - 2 * c12 * c12 * inv_det2)

        db00 = 2 * g11 * b00 + g12 * b10
        db01 = 2 * g11 * b01 + g12 * b11
        db02 = 2 * g11 * b02 + g12 * b12
        db10 = 2 * g22 * b10 + g12 * b00
        db11 = 2 * g22 * b11 + g12 * b01
        db12 = 2 * g22 * b12 + g12 * b02

        # B = A M
        dA00 = db00 * m00 + db01 * m01 + db02 * m02
        dA01 = db00 * m10 + db01 * m11 + db02 * m12
        dA02 = db00 * m20 + db01 * m21 + db02 * m22
        dA10 = db10 * m00 + db11 * m01 + db12 * m02
        dA11 = db10 * m10 + db11 * m11 + db12 * m12
        dA12 = db10 * m20 + db11 * m21 + db12 * m22

        dM00 = a00 * db00 + a10 * db10
        dM01 = a00 * db01 + a10 * db11
        dM02 = a00 * db02 + a10 * db12
        dM10 = a01 * db00 + a11_ * db10
        dM11 = a01 * db01 + a11_ * db11
        dM12 = a01 * db02 + a11_ * db12
        dM20 = a02 * db00 + a12_ * db10
        dM21 = a02 * db01 + a12_ * db11
        dM22 = a02 * db02 + a12_ * db12

        ds0 = dM00 * r00 + dM10 * r10 + dM20 * r20
        ds1 = dM01 * r01 + dM11 * r11 + dM21 * r21
        ds2 = dM02 * r02 + dM12 * r12 + dM22 * r22
        out_d_log_scales[i, 0] = ds0 * s0
        out_d_log_scales[i, 1] = ds1 * s1
        out_d_log_scales[i, 2] = ds2 * s2

        dR00, dR01, dR02 = dM00 * s0, dM01 * s1, dM02 * s2
        dR10, dR11, dR12 = dM10 * s0, dM11 * s1, dM12 * s2
        dR20, dR21, dR22 = dM20 * s0, dM21 * s1, dM22 * s2

        dw = 2 * (-dR01 * z + dR02 * y + dR10 * z - dR12 * x - dR20 * y + dR21 * x)
        dx = 2 * (
            dR01 * y + dR02 * z + dR10 * y - 2 * dR11 * x - dR12 * w + dR20 * z + dR21 * w - 2 * dR22 * x
        )
        dy = 2 * (
            -2 * dR00 * y + dR01 * x + dR02 * w + dR10 * x + dR12 * z - dR20 * w + dR21 * z - 2 * dR22 * y
        )
        dz = 2 * (
            -2 * dR00 * z - dR01 * w + dR02 * x + dR10 * w - 2 * dR11 * z + dR12 * y + dR20 * x + dR21 * y
        )
        dot = w * dw + x * dx + y * dy + z * dz
        out_d_rots[i, 0] = (dw - w * dot) / qn
        out_d_rots[i, 1] = (dx - x * dot) / qn
        out_d_rots[i, 2] = (dy - y * dot) / qn
        out_d_rots[i, 3] = (dz - z * dot) / qn

        # A = J V -> J entries
        dj00 = dA00 * V[0, 0] + dA01 * V[0, 1] + dA02 * V[0, 2]
        dj02 = dA00 * V[2, 0] + dA01 * V[2, 1] + dA02 * V[2, 2]
        dj11 = dA10 * V[1, 0] + dA11 * V[1, 1] + dA12 * V[1, 2]
        dj12 = dA10 * V[2, 0] + dA11 * V[2, 1] + dA12 * V[2, 2]

        tz2 = tz * tz
        dtx = 0.0
        dty = 0.0
        dtz = dj00 * (-fx / tz2) + dj11 * (-fy / tz2)
        dtxc = dj02 * (-fx / tz2)
        dtz += dj02 * (2 * fx * txc / (tz2 * tz))
        dtyc = dj12 * (-fy / tz2)
        dtz += dj12 * (2 * fy * tyc / (tz2 * tz))
        if clx:
            dtz += dtxc * (limx if txz > 0 else -limx)
        else:
            dtx += dtxc
        if cly:
            dtz += dtyc * (limy if tyz > 0 else -limy)
        else:
            dty += dtyc

        gpx, gpy = d_p[i, 0], d_p[i, 1]
        dtx += gpx * fx / tz
        dtz += gpx * (-fx * tx / tz2)
        dty += gpy * fy / tz
        dtz += gpy * (-fy * ty / tz2)

        out_d_means[i, 0] = V[0, 0] * dtx + V[1, 0] * dty + V[2, 0] * dtz
        out_d_means[i, 1] = V[0, 1] * dtx + V[1, 1] * dty + V[2, 1] * dtz
        out_d_means[i, 2] = V[0, 2] * dtx + V[1, 2] * dty + V[2, 2] * dtz


# ---------------------------------------------------------------------------
# Tile instance construction
# ---------------------------------------------------------------------------


@njit(cache=True)
def _fill_instances(x0, x1, y0, y1, offsets, ntx, inst_tile, inst_gauss):
    n = x0.shape[0]
    for i in range(n):
        k = offsets[i]
        for ty in range(y0[i], y1[i] + 1):
            for tx in range(x0[i], x1[i] + 1):
                inst_tile[k] = ty * ntx + tx
                inst_gauss[k] = i
                k += 1


@njit(cache=True)
def _raster_forward(
    width, height, tile_size, tile_starts, inst_gauss,
    p, conic, opac, colors, depth,
    bg, alpha_min, t_min, alpha_clamp,
    out_color, out_alpha, out_depth, out_T,
):
    ntx = (width + tile_size - 1) // tile_size
    nt = tile_starts.shape[0] - 1
    for ti in range(nt):
        s = tile_starts[ti]
        e = tile_starts[ti + 1]
        if s == e:
            continue
        ty = ti // ntx
        tx = ti % ntx
        ylim = min((ty + 1) * tile_size, height)
        xlim = min((tx + 1) * tile_size, width)
        for yy in range(ty * tile_size, ylim):
            pyc = yy + 0.5
            for xx in range(tx * tile_size, xlim):
                pxc = xx + 0.5
                T = 1.0
                cr = 0.0
                cg = 0.0
                cb = 0.0
                dacc = 0.0
                for k in range(s, e):
                    g = inst_gauss[k]
                    dx = pxc - p[g, 0]
                    dy = pyc - p[g, 1]
                    power = (
                        -0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy)
                        - conic[g, 1] * dx * dy
                    )
                    if power > 0.0:
                        continue
                    alpha = opac[g] * math.exp(power)
                    if alpha > alpha_clamp:
                        alpha = alpha_clamp
                    if alpha < alpha_min:
                        continue
                    wgt = alpha * T
                    cr += colors[g, 0] * wgt
                    cg += colors[g, 1] * wgt
                    cb += colors[g, 2] * wgt
                    dacc += depth[g] * wgt
                    T *= 1.0 - alpha
                    if T < t_min:
                        break
                out_color[yy, xx, 0] = cr + T * bg[0]
                out_color[yy, xx, 1] = cg + T * bg[1]
                out_color[yy, xx, 2] = cb + T * bg[2]
                a = 1.0 - T
                out_alpha[yy, xx] = a
                out_depth[yy, xx] = dacc / a if a > 1e-12 else 0.0
                out_T[yy, xx] = T


@njit(cache=True)
def _raster_backward(
    width, height, tile_size, tile_starts, inst_gauss,
    p, conic, opac, colors, depth,
    bg, alpha_min, t_min, alpha_clamp,
    dL_dcolor,
    scr_g, scr_alpha, scr_G, scr_dx, scr_dy, scr_clamped,
    d_p, d_conic, d_opac, d_colors,
):
    ntx = (width + tile_size - 1) // tile_size
    nt = tile_starts.shape[0] - 1
    for ti in range(nt):
        s = tile_starts[ti]
        e = tile_starts[ti + 1]
        if s == e:
            continue
        ty = ti // ntx
        tx = ti % ntx
        ylim = min((ty + 1) * tile_size, height)
        xlim = min((tx + 1) * tile_size, width)
        for yy in range(ty * tile_size, ylim):
            pyc = yy + 0.5
            for xx in range(tx * tile_size, xlim):
                pxc = xx + 0.5
                # replay the forward compositing sequence
                T = 1.0
                m = 0
                for k in range(s, e):
                    g = inst_gauss[k]
                    dx = pxc - p[g, 0]
                    dy = pyc - p[g, 1]
                    power = (
                        -0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy)
                        - conic[g, 1] * dx * dy
                    )
                    if power > 0.0:
                        continue
                    gval = math.exp(power)
                    raw = opac[g] * gval
                    clamped = raw > alpha_clamp
                    alpha = alpha_clamp if clamped else raw
                    if alpha < alpha_min:
                        continue
                    scr_g[m] = g
                    scr_alpha[m] = alpha
                    scr_G[m] = gval
                    scr_dx[m] = dx
                    scr_dy[m] = dy
                    scr_clamped[m] = clamped
                    m += 1
                    T *= 1.0 - alpha
                    if T < t_min:
                        break
                if m == 0:
                    continue
                gr = dL_dcolor[yy, xx, 0]
                gg = dL_dcolor[yy, xx, 1]
                gb = dL_dcolor[yy, xx, 2]
                if gr == 0.0 and gg == 0.0 and gb == 0.0:
                    continue
                Sr = bg[0] * T
                Sg = bg[1] * T
                Sb = bg[2] * T
                Tc = T
                for j in range(m - 1, -1, -1):
                    g = scr_g[j]
                    al = scr_alpha[j]
                    one_m = 1.0 - al
                    Tj = Tc / one_m
                    wgt = al * Tj
                    c0 = colors[g, 0]
                    c1 = colors[g, 1]
                    c2 = colors[g, 2]
                    d_colors[g, 0] += gr * wgt
                    d_colors[g, 1] += gg * wgt
                    d_colors[g, 2] += gb * wgt
                    dLda = (
                        gr * (c0 * Tj - Sr / one_m)
                        + gg * (c1 * Tj - Sg / one_m)
                        + gb * (c2 * Tj - Sb / one_m)
                    )
                    Sr += c0 * wgt
                    Sg += c1 * wgt
                    Sb += c2 * wgt
                    Tc = Tj
                    if scr_clamped[j]:
                        continue
                    gval = scr_G[j]
                    d_opac[g] += dLda * gval
                    dLdpow = dLda * opac[g] * gval
                    dx = scr_dx[j]
                    dy = scr_dy[j]
                    d_conic[g, 0] += dLdpow * (-0.5 * dx * dx)
                    d_conic[g, 1] += dLdpow * (-dx * dy)
                    d_conic[g, 2] += dLdpow * (-0.5 * dy * dy)
                    d_p[g, 0] += dLdpow * (conic[g, 0] * dx + conic[g, 1] * dy)
                    d_p[g, 1] += dLdpow * (conic[g, 1] * dx + conic[g, 2] * dy)


# ---------------------------------------------------------------------------
# High-level rendering
# ---------------------------------------------------------------------------


class RenderContext:
    """Everything the backward pass needs from one forward render."""

    __slots__ = (
        "camera", "settings", "means", "log_scales", "rotations", "opacities",
        "colors", "valid", "p", "conic", "depth", "tile_starts", "inst_gauss",
        "bg", "V", "campos", "intrinsics", "max_tile_len",
    )


def _camera_matrices(camera: PinholeCamera):
    r_cw = camera.rotation_camera_to_world()
    V = np.ascontiguousarray(r_cw.T)
    fx = camera.focal_px()
    fy = fx
    cx = camera.width / 2.0
    cy = camera.height / 2.0
    tanx = math.tan(math.radians(camera.fov_deg) / 2.0)
    tany = tanx * camera.height / camera.width
    return V, fx, fy, cx, cy, tanx, tany


def render_forward(
    scene: GaussianScene,
    camera: PinholeCamera,
    bg=(0.0, 0.0, 0.0),
    settings: Optional[RasterSettings] = None,
) -> Tuple[RenderOutput, RenderContext]:
    """Render a pinhole view and keep the context for a backward pass."""
    settings = (settings or RasterSettings()).effective()
    w, h = camera.width, camera.height
    bg = np.asarray(bg, dtype=np.float64).reshape(3)
    n = len(scene)

    V, fx, fy, cx, cy, tanx, tany = _camera_matrices(camera)
    campos = camera.position

    p = np.zeros((n, 2))
    conic = np.zeros((n, 3))
    depth = np.zeros(n)
    radius = np.zeros(n)
    valid = np.zeros(n, dtype=np.bool_)
    means = np.ascontiguousarray(scene.means)
    log_scales = np.ascontiguousarray(scene.log_scales)
    rotations = np.ascontiguousarray(scene.rotations)
    if n:
        _project_forward(
            means, log_scales, rotations, V, campos,
            fx, fy, cx, cy,
            settings.jacobian_clamp * tanx, settings.jacobian_clamp * tany,
            settings.blur, settings.near,
            p, conic, depth, radius, valid,
        )

    opac = scene.opacities()
    colors = np.ascontiguousarray(scene.colors())

    tile = settings.tile_size
    ntx = (w + tile - 1) // tile
    nty = (h + tile - 1) // tile
    if settings.exact:
        sel = valid
        x0 = np.zeros(n, dtype=np.int64)
        y0 = np.zeros(n, dtype=np.int64)
        x1 = np.full(n, ntx - 1, dtype=np.int64)
        y1 = np.full(n, nty - 1, dtype=np.int64)
    else:
        sel = valid & (opac >= settings.alpha_min)
        x0 = np.floor((p[:, 0] - radius) / tile).astype(np.int64)
        x1 = np.floor((p[:, 0] + radius) / tile).astype(np.int64)
        y0 = np.floor((p[:, 1] - radius) / tile).astype(np.int64)
        y1 = np.floor((p[:, 1] + radius) / tile).astype(np.int64)
        x0 = np.clip(x0, 0, ntx - 1)
        x1 = np.clip(x1, 0, ntx - 1)
        y0 = np.clip(y0, 0, nty - 1)
        y1 = np.clip(y1, 0, nty - 1)
        sel = sel & (p[:, 0] + radius >= 0) & (p[:, 0] - radius < w)
        sel = sel & (p[:, 1] + radius >= 0) & (p[:, 1] - radius < h)

    counts = np.where(sel, (x1 - x0 + 1) * (y1 - y0 + 1), 0)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    total = int(offsets[-1])
    inst_tile = np.zeros(total, dtype=np.int64)
    inst_gauss = np.zeros(total, dtype=np.int64)
    if total:
        xx0 = np.where(sel, x0, 0)
        xx1 = np.where(sel, x1, -1)
        yy0 = np.where(sel, y0, 0)
        yy1 = np.where(sel, y1, -1)
        _fill_instances(xx0, xx1, yy0, yy1, offsets[:-1], ntx, inst_tile, inst_gauss)
        order = np.lexsort((inst_gauss, depth[inst_gauss], inst_tile))
        inst_tile = inst_tile[order]
        inst_gauss = inst_gauss[order]

    tile_starts = np.searchsorted(inst_tile, np.arange(ntx * nty + 1))

    out_color = np.empty((h, w, 3))
    out_color[:] = bg
    out_alpha = np.zeros((h, w))
    out_depth = np.zeros((h, w))
    out_T = np.ones((h, w))
    if total:
        _raster_forward(
            w, h, tile, tile_starts, inst_gauss,
            p, conic, opac, colors, depth,
            bg, settings.alpha_min, settings.transmittance_min, settings.alpha_clamp,
            out_color, out_alpha, out_depth, out_T,
        )

    ctx = RenderContext()
    ctx.camera = camera
    ctx.settings = settings
    ctx.means = means
    ctx.log_scales = log_scales
    ctx.rotations = rotations
    ctx.opacities = opac
    ctx.colors = colors
    ctx.valid = valid
    ctx.p = p
    ctx.conic = conic
    ctx.depth = depth
    ctx.tile_starts = tile_starts
    ctx.inst_gauss = inst_gauss
    ctx.bg = bg
    ctx.V = V
    ctx.campos = campos
    ctx.intrinsics = (fx, fy, cx, cy, tanx, tany)
    diffs = np.diff(tile_starts)
    ctx.max_tile_len = int(diffs.max()) if diffs.size else 0
    return RenderOutput(out_color, out_alpha, out_depth), ctx


def render_backward(ctx: RenderContext, dL_dcolor: np.ndarray):
    """Analytic gradients of a scalar loss through the rendered color.

    Returns a dict with d_means, d_log_scales, d_rotations (raw
    quaternion), d_opacities and d_colors (activated opacity/color).
    """
    n = ctx.means.shape[0]
    settings = ctx.settings
    cam = ctx.camera
    d_p = np.zeros((n, 2))
    d_conic = np.zeros((n, 3))
    d_opac = np.zeros(n)
    d_colors = np.zeros((n, 3))
    if ctx.inst_gauss.size:
        mlen = max(ctx.max_tile_len, 1)
        _raster_backward(
            cam.width, cam.height, settings.tile_size, ctx.tile_starts, ctx.inst_gauss,
            ctx.p, ctx.conic, ctx.opacities, ctx.colors, ctx.depth,
            ctx.bg, settings.alpha_min, settings.transmittance_min, settings.alpha_clamp,
            np.ascontiguousarray(dL_dcolor),
            np.zeros(mlen, dtype=np.int64), np.zeros(mlen), np.zeros(mlen),
            np.zeros(mlen), np.zeros(mlen), np.zeros(mlen, dtype=np.bool_),
            d_p, d_conic, d_opac, d_colors,
        )

    d_means = np.zeros((n, 3))
    d_log_scales = np.zeros((n, 3))
    d_rots = np.zeros((n, 4))
    if n:
        fx, fy, cx, cy, tanx, tany = ctx.intrinsics
        _project_backward(
            ctx.means, ctx.log_scales, ctx.rotations, ctx.V, ctx.campos,
            fx, fy, cx, cy,
            settings.jacobian_clamp * tanx, settings.jacobian_clamp * tany,
            settings.blur, settings.near,
            ctx.valid, d_p, d_conic,
            d_means, d_log_scales, d_rots,
        )
    return {
        "means": d_means,
        "log_scales": d_log_scales,
        "rotations": d_rots,
        "opacities": d_opac,
        "colors": d_colors,
    }


def render_pinhole(
    scene: GaussianScene,
    camera: PinholeCamera,
    bg=(0.0, 0.0, 0.0),
    settings: Optional[RasterSettings] = None,
) -> RenderOutput:
    """Deterministic forward splatting render of a pinhole view."""
    out, _ = render_forward(scene, camera, bg=bg, settings=settings)
    return out


CUBE_FACE_ANGLES = ((0, 0), (90, 0), (180, 0), (270, 0), (0, 90), (0, -90))


def cube_face_cameras(center, face_size: int) -> list:
    """Six 90-degree cube-face cameras at the given center."""
    return [
        PinholeCamera.from_angles(az, el, 90.0, face_size, face_size, position=center)
        for az, el in CUBE_FACE_ANGLES
    ]


def _sample_face(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Clamped bilinear sample at continuous image coords (pixel centers
    at integer + 0.5)."""
    size_y, size_x = img.shape[:2]
    x = np.clip(xs - 0.5, 0.0, size_x - 1.0)
    y = np.clip(ys - 0.5, 0.0, size_y - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, size_x - 1)
    y1 = np.minimum(y0 + 1, size_y - 1)
    fxs = x - x0
    fys = y - y0
    if img.ndim == 3:
        fxs = fxs[..., None]
        fys = fys[..., None]
    top = img[y0, x0] * (1 - fxs) + img[y0, x1] * fxs
    bot = img[y1, x0] * (1 - fxs) + img[y1, x1] * fxs
    return top * (1 - fys) + bot * fys


def render_equirect(
    scene: GaussianScene,
    width: int,
    height: int,
    center=(0.0, 0.0, 0.0),
    bg=(0.0, 0.0, 0.0),
    settings: Optional[RasterSettings] = None,
    face_size: Optional[int] = None,
) -> RenderOutput:
    """Render an equirectangular panorama from six cube faces.

    Renders 90-degree pinhole faces at the given center and resamples
    them to the W = 2H equirectangular grid; face seams stay continuous
    within bilinear interpolation tolerance.
    """
    if width != 2 * height:
        raise ValueError("equirect render requires W = 2H")
    face_size = face_size or max(32, width // 2)
    cams = cube_face_cameras(center, face_size)
    outputs = [render_pinhole(scene, c, bg=bg, settings=settings) for c in cams]

    us, vs = np.meshgrid(np.arange(width), np.arange(height))
    theta, phi = pixel_to_angles(us, vs, width, height)
    dirs = spherical_to_cartesian(theta, phi, np.ones_like(theta))

    fwd = np.stack([c.rotation_camera_to_world()[:, 2] for c in cams])
    face_id = np.argmax(dirs @ fwd.T, axis=-1)

    color = np.zeros((height, width, 3))
    alpha = np.zeros((height, width))
    depth = np.zeros((height, width))
    f = cams[0].focal_px()
    cx = face_size / 2.0
    for fi, cam in enumerate(cams):
        sel = face_id == fi
        if not sel.any():
            continue
        d = dirs[sel] @ cam.rotation_camera_to_world()
        xs = f * d[:, 0] / d[:, 2] + cx
        ys = f * d[:, 1] / d[:, 2] + cx
        color[sel] = _sample_face(outputs[fi].color, xs, ys)
        alpha[sel] = _sample_face(outputs[fi].alpha, xs, ys)
        depth[sel] = _sample_face(outputs[fi].depth, xs, ys)
    return RenderOutput(color, alpha, depth)
