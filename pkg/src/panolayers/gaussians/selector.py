"""Gaussian selector: re-activates frozen gaussians that block newly
inserted asset points.

A frozen gaussian g is activated when some new point p lies on the same
camera ray (angle between g and p within the tolerance) at a larger
distance from the origin: ||g|| < ||p||. The accelerated variant hashes
unit direction vectors into the log-spaced grid and only tests point
candidates from the matching and adjacent cells; at the default
tolerance the cell width exceeds the tolerance displacement, so the
result is identical to the brute-force test.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..pointcloud import GridHashParams, grid_hash

__all__ = ["select_active", "select_active_bruteforce"]

DEFAULT_ANGULAR_TOL_DEG = 0.5


def _units_and_norms(points: np.ndarray):
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    d = np.linalg.norm(p, axis=1)
    if np.any(d == 0):
        raise ValueError("points at the origin have no ray direction")
    return p / d[:, None], d


def select_active_bruteforce(
    gaussian_means: np.ndarray,
    new_points: np.ndarray,
    angular_tol_deg: float = DEFAULT_ANGULAR_TOL_DEG,
) -> np.ndarray:
    """O(n*m) reference ray test. Returns a boolean activation mask."""
    if len(gaussian_means) == 0 or len(new_points) == 0:
        return np.zeros(len(gaussian_means), dtype=bool)
    ug, dg = _units_and_norms(gaussian_means)
    up, dp = _units_and_norms(new_points)
    cos_tol = np.cos(np.deg2rad(angular_tol_deg))
    cos = ug @ up.T
    hit = (cos >= cos_tol) & (dg[:, None] < dp[None, :])
    return hit.any(axis=1)


def select_active(
    gaussian_means: np.ndarray,
    new_points: np.ndarray,
    params: Optional[GridHashParams] = None,
    angular_tol_deg: float = DEFAULT_ANGULAR_TOL_DEG,
) -> np.ndarray:
    """Grid-accelerated ray test; equals the brute-force result.

    Unit direction vectors are hashed with the log grid; for each
    gaussian, the exact test runs only against points hashed into the
    adjacent-cell neighborhood of its cell. The signed log grid jumps
    from index +1 to -1 across zero, so adjacency spans offsets -2..2
    per component.
    """
    params = params or GridHashParams()
    n = len(gaussian_means)
    if n == 0 or len(new_points) == 0:
        return np.zeros(n, dtype=bool)
    # adjacency is sufficient only while the tolerance displacement fits
    # within the narrowest cell: the signed-log cell width is at least
    # expm1(1/beta3) in component value, and two unit directions within
    # tol radians differ by at most tol per component.
    tol_rad = np.deg2rad(angular_tol_deg)
    min_cell = np.expm1(1.0 / params.beta3)
    if tol_rad > min_cell:
        return select_active_bruteforce(gaussian_means, new_points, angular_tol_deg)

    ug, dg = _units_and_norms(gaussian_means)
    up, dp = _units_and_norms(new_points)
    cos_tol = np.cos(tol_rad)

    cells_p = grid_hash(up, params)
    cells_g = grid_hash(ug, params)

    point_buckets: dict = {}
    for j, cell in enumerate(map(tuple, cells_p)):
        point_buckets.setdefault(cell, []).append(j)

    gauss_buckets: dict = {}
    for i, cell in enumerate(map(tuple, cells_g)):
        gauss_buckets.setdefault(cell, []).append(i)

    active = np.zeros(n, dtype=bool)
    span = (-2, -1, 0, 1, 2)
    offsets = [(a, b, c) for a in span for b in span for c in span]
    for cell, gidx in gauss_buckets.items():
        cand: list = []
        for off in offsets:
            cand.extend(point_buckets.get((cell[0] + off[0], cell[1] + off[1], cell[2] + off[2]), ()))
        if not cand:
            continue
        gi = np.array(gidx)
        pj = np.array(cand)
        cos = ug[gi] @ up[pj].T
        hit = (cos >= cos_tol) & (dg[gi][:, None] < dp[pj][None, :])
        active[gi] |= hit.any(axis=1)
    return active
