"""Fuse a stitched RGBD map into 3D products: point cloud, elevation, PLY.

All geometry is in relative units.  Un-projection uses an orthographic
top-down model: pixel (row v, col u) with depth D becomes
(u * cell, v * cell, height_scale * (1 - D)) — depth grows away from the
camera, so height is its complement.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DomainError, ValidationError
from .stitcher import TerrainMap


@dataclass
class PointCloud:
    positions: np.ndarray  # (N, 3) float64, relative units
    colors: np.ndarray     # (N, 3) float64 in [0, 1]
    stride: int = 1        # subsampling stride the cloud was built with

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.colors = np.asarray(self.colors, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise DomainError(f"positions must be (N, 3), got {self.positions.shape}")
        if self.colors.shape != self.positions.shape:
            raise DomainError("colors must match positions shape")
        if not np.all(np.isfinite(self.positions)):
            raise DomainError("positions contain non-finite values")

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass
class ElevationMap:
    heights: np.ndarray  # (H, W) float64 in [0, 1]
    cell_size: float = 1.0

    def __post_init__(self):
        if self.heights.min() < 0.0 or self.heights.max() > 1.0:
            raise DomainError("elevation values must lie in [0, 1]")


def to_pointcloud(tmap: TerrainMap, stride: int = 1,
                  height_scale: float = 1.0, cell_size: float = 1.0) -> PointCloud:
    """One point per (strided) map pixel under the orthographic model."""
    if stride < 1:
        raise DomainError(f"stride must be >= 1, got {stride}")
    depth = tmap.depth[::stride, ::stride]
    rgb = tmap.rgb[::stride, ::stride]
    vv, uu = np.mgrid[0:tmap.height:stride, 0:tmap.width:stride]
    positions = np.stack([
        uu.ravel() * cell_size,
        vv.ravel() * cell_size,
        height_scale * (1.0 - depth.ravel()),
    ], axis=1)
    return PointCloud(positions=positions, colors=rgb.reshape(-1, 3), stride=stride)


def to_pointcloud_pinhole(tmap: TerrainMap, fx: float, fy: float,
                          cx: float, cy: float, stride: int = 1,
                          depth_near: float = 1.0,
                          depth_span: float = 1.0) -> PointCloud:
    """Pinhole un-projection option with explicit intrinsics.

    The relative depth channel maps linearly onto camera-space depth,
    z = depth_near + D * depth_span (relative units; the convention is a
    documented choice, not a metric claim); pixel (u, v) unprojects to
    ((u - cx) z / fx, (v - cy) z / fy, z) in the camera frame.
    """
    if stride < 1:
        raise DomainError(f"stride must be >= 1, got {stride}")
    if depth_span <= 0 or fx == 0 or fy == 0:
        raise DomainError("depth_span must be positive and focal lengths nonzero")
    depth = tmap.depth[::stride, ::stride]
    rgb = tmap.rgb[::stride, ::stride]
    vv, uu = np.mgrid[0:tmap.height:stride, 0:tmap.width:stride]
    z = depth_near + depth.ravel() * depth_span
    positions = np.stack([(uu.ravel() - cx) * z / fx,
                          (vv.ravel() - cy) * z / fy, z], axis=1)
    return PointCloud(positions=positions, colors=rgb.reshape(-1, 3), stride=stride)


def reproject_topdown(cloud: PointCloud, height: int, width: int,
                      cell_size: float = 1.0) -> np.ndarray:
    """Invert :func:`to_pointcloud` back to the RGB raster (stride-1 clouds
    reproduce it exactly)."""
    rgb = np.zeros((height, width, 3))
    u = np.round(cloud.positions[:, 0] / cell_size).astype(int)
    v = np.round(cloud.positions[:, 1] / cell_size).astype(int)
    rgb[v, u] = cloud.colors
    return rgb


def elevation(tmap: TerrainMap) -> ElevationMap:
    """Heightfield as the complement of the depth channel."""
    return ElevationMap(heights=1.0 - tmap.depth)


def save_elevation(emap: ElevationMap, path) -> None:
    png16 = np.floor(emap.heights * 65535 + 0.5).astype(np.uint16)
    Image.fromarray(png16).save(path)


# --- PLY ----------------------------------------------------------------------

def export_ply(cloud: PointCloud, path) -> None:
    """ASCII PLY with double x/y/z and uchar red/green/blue.

    Positions are written at full precision (exact round trip); colors are
    quantized to 0-255 with round-half-up.
    """
    try:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {len(cloud)}\n")
            for axis in "xyz":
                fh.write(f"property double {axis}\n")
            for chan in ("red", "green", "blue"):
                fh.write(f"property uchar {chan}\n")
            fh.write("end_header\n")
            q = np.floor(cloud.colors * 255 + 0.5).astype(np.uint8)
            for (x, y, z), (r, g, b) in zip(cloud.positions, q):
                fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r} {r} {g} {b}\n")
    except OSError as exc:
        raise OSError(f"failed to write PLY {path}: {exc}") from exc


def import_ply(path) -> PointCloud:
    """Read a point cloud written by :func:`export_ply`."""
    try:
        lines = Path(path).read_text(encoding="ascii").splitlines()
    except OSError as exc:
        raise OSError(f"failed to read PLY {path}: {exc}") from exc
    if not lines or lines[0] != "ply":
        raise ValidationError(f"{path}: not a PLY file")
    count = None
    header_end = None
    for i, line in enumerate(lines):
        if line.startswith("element vertex"):
            count = int(line.split()[-1])
        if line == "end_header":
            header_end = i
            break
    if count is None or header_end is None:
        raise ValidationError(f"{path}: malformed PLY header")
    body = lines[header_end + 1:header_end + 1 + count]
    if len(body) != count:
        raise ValidationError(f"{path}: expected {count} vertices, found {len(body)}")
    positions = np.zeros((count, 3))
    colors = np.zeros((count, 3))
    for i, line in enumerate(body):
        parts = line.split()
        positions[i] = [float(v) for v in parts[:3]]
        colors[i] = [int(v) / 255.0 for v in parts[3:6]]
    return PointCloud(positions=positions, colors=colors)
