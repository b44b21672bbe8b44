"""Spherical range-image and bird's-eye-view projections of a LiDAR scan."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .posehead import PoseSE3


@dataclass
class LidarScan:
    points: np.ndarray
    pose: PoseSE3 = field(default_factory=PoseSE3.identity)
    scan_id: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise ValueError("a scan needs at least one point")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("scan contains non-finite coordinates")
        if np.any(np.all(self.points == 0.0, axis=1)):
            raise ValueError("scan contains a point at the sensor origin")

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LidarScan):
            return NotImplemented
        return (self.scan_id == other.scan_id
                and self.points.shape == other.points.shape
                and self.points.tobytes() == other.points.tobytes()
                and self.pose.t.tobytes() == other.pose.t.tobytes()
                and self.pose.q.tobytes() == other.pose.q.tobytes())


@dataclass
class RangeImage:
    values: np.ndarray  # (H, W) radius in meters, 0 = empty

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class BevImage:
    values: np.ndarray  # (H', W') height in meters, sentinel = empty
    x_max: float
    y_max: float
    sentinel: float = 0.0

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _points(scan) -> np.ndarray:
    pts = scan.points if isinstance(scan, LidarScan) else np.asarray(scan, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("cannot project an empty scan")
    return pts


def spherical_coords(points: np.ndarray):
    """Elevation, azimuth and range of each point."""
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    phi = np.arctan2(z, np.hypot(x, y))
    theta = np.arctan2(y, x)
    r = np.sqrt(x * x + y * y + z * z)
    return phi, theta, r


def spherical_pixels(points: np.ndarray, H: int, W: int):
    phi, theta, r = spherical_coords(points)
    row = np.clip(np.floor((phi + np.pi / 2) / np.pi * H).astype(np.int64), 0, H - 1)
    col = np.clip(np.floor((theta + np.pi) / (2 * np.pi) * W).astype(np.int64), 0, W - 1)
    return row, col, r


def spherical_project(scan, H: int = 32, W: int = 64) -> RangeImage:
    """Range image where each pixel keeps the nearest return that lands in it."""
    if H < 2 or W < 2:
        raise ValueError(f"image must be at least 2x2, got {H}x{W}")
    pts = _points(scan)
    row, col, r = spherical_pixels(pts, H, W)
    flat = np.full(H * W, np.inf)
    np.minimum.at(flat, row * W + col, r)
    flat[np.isinf(flat)] = 0.0
    return RangeImage(flat.reshape(H, W))


def bev_project(scan, H: int = 64, W: int = 64, x_max: float = 20.0, y_max: float = 20.0,
                sentinel: float = 0.0) -> BevImage:
    """Top-down height image; the tallest point wins each pixel."""
    if x_max <= 0 or y_max <= 0:
        raise ValueError("BEV clip ranges must be positive")
    pts = _points(scan)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    keep = (np.abs(x) <= x_max) & (np.abs(y) <= y_max)
    x, y, z = x[keep], y[keep], z[keep]
    row = np.clip(np.floor((y + y_max) / (2 * y_max) * H).astype(np.int64), 0, H - 1)
    col = np.clip(np.floor((x + x_max) / (2 * x_max) * W).astype(np.int64), 0, W - 1)
    flat = np.full(H * W, -np.inf)
    np.maximum.at(flat, row * W + col, z)
    flat[np.isneginf(flat)] = sentinel
    return BevImage(flat.reshape(H, W), x_max, y_max, sentinel)


def image_to_tokens(img) -> np.ndarray:
    """Row-major flatten ``(H, W[, C])`` into ``(H*W, C)``."""
    arr = img.values if hasattr(img, "values") else np.asarray(img)
    if arr.size == 0:
        raise ValueError("cannot tokenise an empty grid")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.reshape(arr.shape[0] * arr.shape[1], arr.shape[2])


def tokens_to_image(tokens: np.ndarray, H: int, W: int) -> np.ndarray:
    return np.asarray(tokens).reshape(H, W, -1)
