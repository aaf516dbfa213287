"""Layered panoramic 3D scene construction.

Decomposes an equirectangular panorama into depth layers, lifts the
layers to point clouds, optimizes a layered 3D Gaussian scene with
occlusion conflict resolution, and renders novel views along
exploration trajectories.
"""

__version__ = "0.1.0"
