"""Camera trajectories for novel-view rendering: azimuth sweeps, zigzag
flythroughs, and off-center hemisphere view sets for panorama
re-synthesis."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np

from .erp import PinholeCamera, cartesian_to_spherical, spherical_to_cartesian

__all__ = ["Trajectory", "generate_trajectory"]

TRAJECTORY_KINDS = ("sweep", "zigzag", "hemisphere")


@dataclass
class Trajectory:
    kind: str
    cameras: List[PinholeCamera]

    def __post_init__(self):
        if not self.cameras:
            raise ValueError("trajectory needs at least one pose")

    def __len__(self) -> int:
        return len(self.cameras)

    def save(self, path) -> None:
        poses = [
            {
                "position": list(map(float, c.position)),
                "orientation": list(map(float, c.orientation)),
                "fov_deg": c.fov_deg,
                "width": c.width,
                "height": c.height,
            }
            for c in self.cameras
        ]
        Path(path).write_text(json.dumps({"kind": self.kind, "poses": poses}, indent=2))

    @classmethod
    def load(cls, path) -> "Trajectory":
        data = json.loads(Path(path).read_text())
        cams = [
            PinholeCamera(
                position=np.array(p["position"]),
                orientation=np.array(p["orientation"]),
                fov_deg=p["fov_deg"],
                width=p["width"],
                height=p["height"],
            )
            for p in data["poses"]
        ]
        return cls(data["kind"], cams)


def _sweep(
    frames: int = 60,
    elevation_deg: float = 0.0,
    fov_deg: float = 90.0,
    width: int = 256,
    height: int = 256,
    position=(0.0, 0.0, 0.0),
) -> List[PinholeCamera]:
    return [
        PinholeCamera.from_angles(
            360.0 * k / frames, elevation_deg, fov_deg, width, height, position=position
        )
        for k in range(frames)
    ]


def _zigzag(
    segments: int = 6,
    amplitude: float = 0.5,
    forward_length: float = 2.0,
    frames: int = 60,
    lookahead: float = 0.5,
    fov_deg: float = 90.0,
    width: int = 256,
    height: int = 256,
) -> List[PinholeCamera]:
    """Piecewise-linear forward path alternating lateral offsets, with
    look-ahead orientation along the path."""
    if segments < 1:
        raise ValueError("zigzag needs at least one segment")
    waypoints = [np.zeros(3)]
    for i in range(1, segments + 1):
        lateral = amplitude * (1 if i % 2 == 1 else -1)
        if i == segments:
            lateral = 0.0
        waypoints.append(np.array([forward_length * i / segments, 0.0, lateral]))
    waypoints = np.stack(waypoints)

    seg_vecs = np.diff(waypoints, axis=0)
    seg_lens = np.linalg.norm(seg_vecs, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_lens)])
    total = cum[-1]

    def point_at(dist: float) -> np.ndarray:
        dist = min(max(dist, 0.0), total)
        seg = int(np.searchsorted(cum[1:], dist, side="left"))
        seg = min(seg, len(seg_lens) - 1)
        t = (dist - cum[seg]) / seg_lens[seg] if seg_lens[seg] > 0 else 0.0
        return waypoints[seg] + t * seg_vecs[seg]

    cams = []
    for k in range(frames):
        d = total * k / max(frames - 1, 1)
        pos = point_at(d)
        ahead = point_at(min(d + lookahead, total))
        look = ahead - pos
        if np.linalg.norm(look) < 1e-9:
            look = seg_vecs[-1]
        theta, phi, _ = cartesian_to_spherical(look)
        cams.append(
            PinholeCamera.from_angles(
                np.rad2deg(theta), np.rad2deg(phi), fov_deg, width, height, position=pos
            )
        )
    return cams


HEMISPHERE_VIEW_ELEVATIONS = (-45.0, 0.0, 45.0)


def _hemisphere(
    radius: float = 1.0,
    positions: int = 4,
    ring_elevation_deg: float = 30.0,
    view_azimuths: int = 8,
    fov_deg: float = 90.0,
    width: int = 256,
    height: int = 256,
) -> List[PinholeCamera]:
    """Positions on a circular trajectory on the hemisphere around the
    origin; each position renders views at 8 azimuths x 3 elevations to
    re-synthesize an off-center panorama."""
    cams = []
    for j in range(positions):
        az = 360.0 * j / positions + 45.0
        pos = spherical_to_cartesian(
            np.deg2rad(az), np.deg2rad(ring_elevation_deg), radius
        )
        for el in HEMISPHERE_VIEW_ELEVATIONS:
            for k in range(view_azimuths):
                cams.append(
                    PinholeCamera.from_angles(
                        360.0 * k / view_azimuths, el, fov_deg, width, height, position=pos
                    )
                )
    return cams


def generate_trajectory(kind: str, **params) -> Trajectory:
    """Build a trajectory of the given kind (sweep, zigzag, hemisphere).

    Raises:
        ValueError: for an unknown kind or invalid parameters.
    """
    if kind == "sweep":
        return Trajectory("sweep", _sweep(**params))
    if kind == "zigzag":
        return Trajectory("zigzag", _zigzag(**params))
    if kind == "hemisphere":
        return Trajectory("hemisphere", _hemisphere(**params))
    raise ValueError(f"unknown trajectory kind: {kind!r} (expected one of {TRAJECTORY_KINDS})")
