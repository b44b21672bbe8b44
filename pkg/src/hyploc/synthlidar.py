"""Synthetic box world, spinning multi-beam LiDAR raycaster and scan files.

Scan file layout (little-endian)::

    magic   4s   b"HLLS"
    version u32  1
    scan_id u64
    count   u32
    pose    7*f64  tx ty tz qw qx qy qz
    points  count*3*f64

Manifests are UTF-8 text, one tab-separated record per line: scan path
(relative to the manifest), 3 translation floats, 4 quaternion floats.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .posehead import PoseSE3, quat_from_yaw
from .projection import LidarScan

SCAN_MAGIC = b"HLLS"
SCAN_VERSION = 1
_HEADER = struct.Struct("<4sIQI7d")


class ScanFormatError(ValueError):
    pass


@dataclass
class Scene:
    boxes: np.ndarray          # (n, 2, 3) min / max corners
    radius: float = 20.0
    ground_z: float = 0.0
    seed: int = 0
    route: "RouteShape | None" = None

    @classmethod
    def generate(cls, seed: int = 0, radius: float = 20.0, num_boxes: int = 12,
                 route: "RouteShape | None" = None, clearance: float = 2.5) -> "Scene":
        """Random boxes inside ``radius`` that keep ``clearance`` from the route."""
        rng = np.random.default_rng([seed, 7])
        route = route or RouteShape.for_scene(radius)
        probe = route.sample(400)[0][:, :2]
        boxes = []
        attempts = 0
        while len(boxes) < num_boxes:
            attempts += 1
            if attempts > 10000:
                raise RuntimeError("could not place boxes; scene too crowded")
            half = rng.uniform(0.5, 2.0, size=2)
            height = rng.uniform(1.5, 8.0)
            ang = rng.uniform(0, 2 * np.pi)
            dist = rng.uniform(0.0, radius - np.linalg.norm(half) - 0.5)
            c = dist * np.array([np.cos(ang), np.sin(ang)])
            # distance from route samples to the box footprint
            gap = np.maximum(np.abs(probe - c) - half, 0.0)
            if np.min(np.linalg.norm(gap, axis=1)) < clearance:
                continue
            lo = np.array([c[0] - half[0], c[1] - half[1], 0.0])
            hi = np.array([c[0] + half[0], c[1] + half[1], height])
            boxes.append(np.stack([lo, hi]))
        return cls(np.array(boxes).reshape(-1, 2, 3), radius, 0.0, seed, route)


@dataclass
class SensorModel:
    num_beams: int = 16
    phi_min: float = np.radians(-25.0)
    phi_max: float = np.radians(15.0)
    azimuth_samples: int = 180
    max_range: float = 30.0
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if not (-np.pi / 2 < self.phi_min <= self.phi_max < np.pi / 2):
            raise ValueError("vertical field of view must lie inside (-pi/2, pi/2)")
        if self.max_range <= 0:
            raise ValueError("max range must be positive")

    def directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame, ``(beams * azimuths, 3)``."""
        if self.num_beams == 1:
            phis = np.array([self.phi_min])
        else:
            phis = np.linspace(self.phi_min, self.phi_max, self.num_beams)
        thetas = -np.pi + (np.arange(self.azimuth_samples) + 0.5) * (2 * np.pi / self.azimuth_samples)
        P, T = np.meshgrid(phis, thetas, indexing="ij")
        return np.stack([np.cos(P) * np.cos(T), np.cos(P) * np.sin(T), np.sin(P)], axis=-1).reshape(-1, 3)


def raycast_distances(origin: np.ndarray, dirs: np.ndarray, scene: Scene, max_range: float) -> np.ndarray:
    """Nearest hit distance along each ray (``inf`` for a miss)."""
    best = np.full(len(dirs), np.inf)
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = (scene.ground_z - origin[2]) / dz
    ok = (dz < 0) & (t_ground > 0)
    best[ok] = t_ground[ok]
    if len(scene.boxes):
        inv = np.divide(1.0, dirs, out=np.full_like(dirs, np.inf), where=dirs != 0)
        lo = (scene.boxes[:, 0][None] - origin) * inv[:, None]   # (R, nb, 3)
        hi = (scene.boxes[:, 1][None] - origin) * inv[:, None]
        # rays parallel to a slab: inside -> unbounded, outside -> empty
        par = (dirs == 0)[:, None, :]
        inside = (origin >= scene.boxes[:, 0][None]) & (origin <= scene.boxes[:, 1][None])
        lo = np.where(par, np.where(inside, -np.inf, np.inf), lo)
        hi = np.where(par, np.where(inside, np.inf, -np.inf), hi)
        t_near = np.max(np.minimum(lo, hi), axis=-1)
        t_far = np.min(np.maximum(lo, hi), axis=-1)
        hit = (t_far >= t_near) & (t_far > 0)
        t_hit = np.where(t_near > 0, t_near, t_far)
        t_hit = np.where(hit, t_hit, np.inf)
        best = np.minimum(best, t_hit.min(axis=1))
    best[best > max_range] = np.inf
    return best


def raycast_scan(scene: Scene, sensor: SensorModel, pose: PoseSE3, scan_id: int = 0,
                 seed: int | None = None) -> LidarScan:
    """Simulate one revolution at ``pose``; points are returned in the sensor frame."""
    if np.linalg.norm(pose.t[:2]) > scene.radius:
        raise ValueError("pose lies outside the scene radius")
    dirs = sensor.directions()
    world_dirs = dirs @ pose.rotation.T
    dist = raycast_distances(pose.t, world_dirs, scene, sensor.max_range)
    keep = np.isfinite(dist)
    if not keep.any():
        raise ValueError(f"degenerate pose for scan {scan_id}: no ray hit anything")
    r = dist[keep]
    if sensor.noise_sigma > 0:
        rng = np.random.default_rng([sensor.seed if seed is None else seed, scan_id])
        r = r + rng.normal(0.0, sensor.noise_sigma, size=r.shape)
        r = np.clip(r, 1e-3, sensor.max_range)
    return LidarScan(dirs[keep] * r[:, None], pose, scan_id)


# ---------------------------------------------------------------- routes


@dataclass(frozen=True)
class RouteShape:
    """Rounded rectangle centred at the origin."""

    half_x: float
    half_y: float
    corner: float
    height: float = 1.8

    @classmethod
    def for_scene(cls, radius: float, seed: int = 0) -> "RouteShape":
        rng = np.random.default_rng([seed, 11])
        hx = radius * rng.uniform(0.45, 0.55)
        hy = radius * rng.uniform(0.30, 0.40)
        return cls(hx, hy, min(hx, hy) * 0.5)

    @property
    def perimeter(self) -> float:
        sx = 2 * (self.half_x - self.corner)
        sy = 2 * (self.half_y - self.corner)
        return 2 * sx + 2 * sy + 2 * np.pi * self.corner

    def at(self, s: np.ndarray):
        """Position ``(n, 2)`` and heading at arc length ``s`` (wrapped)."""
        s = np.mod(np.asarray(s, dtype=np.float64), self.perimeter)
        a, b, rc = self.half_x - self.corner, self.half_y - self.corner, self.corner
        arc = np.pi * rc / 2
        # segments counter-clockwise from (half_x, -b): right edge, TR corner, top, TL, left, BL, bottom, BR
        segs = [
            ("line", np.array([a + rc, -b]), np.array([0.0, 1.0]), 2 * b),
            ("arc", np.array([a, b]), 0.0, arc),
            ("line", np.array([a, b + rc]), np.array([-1.0, 0.0]), 2 * a),
            ("arc", np.array([-a, b]), np.pi / 2, arc),
            ("line", np.array([-a - rc, b]), np.array([0.0, -1.0]), 2 * b),
            ("arc", np.array([-a, -b]), np.pi, arc),
            ("line", np.array([-a, -b - rc]), np.array([1.0, 0.0]), 2 * a),
            ("arc", np.array([a, -b]), 3 * np.pi / 2, arc),
        ]
        pos = np.zeros((len(s), 2))
        yaw = np.zeros(len(s))
        start = 0.0
        for kind, p0, extra, length in segs:
            m = (s >= start) & (s <= start + length + 1e-12)
            u = s[m] - start
            if kind == "line":
                pos[m] = p0 + u[:, None] * extra
                yaw[m] = np.arctan2(extra[1], extra[0])
            else:
                ang = extra + u / rc
                pos[m] = p0 + rc * np.stack([np.cos(ang), np.sin(ang)], axis=1)
                yaw[m] = ang + np.pi / 2
            start += length
        return pos, np.mod(yaw + np.pi, 2 * np.pi) - np.pi

    def sample(self, n: int):
        s = np.linspace(0.0, self.perimeter, n)
        return self.at(s)


@dataclass
class Trajectory:
    poses: list[PoseSE3]
    timestamps: np.ndarray
    shape: RouteShape | None = None

    def translations(self) -> np.ndarray:
        return np.array([p.t for p in self.poses])


def make_route(scene: Scene, n_poses: int, seed: int | None = None) -> Trajectory:
    """Closed rounded-rectangle loop; the last pose repeats the first.

    Without a seed the scene's own route shape is used.
    """
    if n_poses < 2:
        raise ValueError("a route needs at least two poses")
    if seed is None and scene.route is not None:
        shape = scene.route
    else:
        shape = RouteShape.for_scene(scene.radius, seed or 0)
    pos, yaw = shape.sample(n_poses)
    pos[-1] = pos[0]
    yaw[-1] = yaw[0]
    poses = [PoseSE3(np.array([p[0], p[1], shape.height]), quat_from_yaw(float(y)))
             for p, y in zip(pos, yaw)]
    return Trajectory(poses, np.linspace(0.0, 1.0, n_poses) * shape.perimeter, shape)


# ---------------------------------------------------------------- scan files


def write_scan(path, scan: LidarScan) -> None:
    pts = np.ascontiguousarray(scan.points, dtype="<f8")
    header = _HEADER.pack(SCAN_MAGIC, SCAN_VERSION, int(scan.scan_id), len(pts),
                          *scan.pose.t.tolist(), *scan.pose.q.tolist())
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pts.tobytes())


def read_scan(path) -> LidarScan:
    with open(path, "rb") as fh:
        raw = fh.read()
    return decode_scan(raw, str(path))


def decode_scan(raw: bytes, source: str = "<bytes>") -> LidarScan:
    if len(raw) < 4:
        raise ScanFormatError(f"{source}: truncated: expected bytes [0, 4) for magic, file has {len(raw)}")
    if raw[:4] != SCAN_MAGIC:
        raise ScanFormatError(f"{source}: bad magic {raw[:4]!r} at byte 0, expected {SCAN_MAGIC!r}")
    if len(raw) < _HEADER.size:
        raise ScanFormatError(
            f"{source}: truncated header: expected bytes [{len(raw)}, {_HEADER.size}) missing")
    magic, version, scan_id, count, *pose = _HEADER.unpack_from(raw, 0)
    if version != SCAN_VERSION:
        raise ScanFormatError(f"{source}: unsupported version {version} at byte 4")
    end = _HEADER.size + 24 * count
    if len(raw) < end:
        raise ScanFormatError(f"{source}: truncated points: expected bytes [{len(raw)}, {end}) missing")
    if len(raw) > end:
        raise ScanFormatError(f"{source}: {len(raw) - end} trailing bytes after byte {end}")
    pts = np.frombuffer(raw, dtype="<f8", count=3 * count, offset=_HEADER.size).reshape(count, 3)
    q = np.array(pose[3:])
    scan = LidarScan.__new__(LidarScan)
    scan.points = pts.astype(np.float64)
    p = PoseSE3.__new__(PoseSE3)
    p.t = np.array(pose[:3])
    p.q = q
    scan.pose = p
    scan.scan_id = scan_id
    return scan


# ---------------------------------------------------------------- datasets


@dataclass
class SplitSpec:
    n_train: int = 500
    n_test: int = 100
    jitter_radius: float = 0.5       # meters, lateral offset bound
    yaw_jitter: float = np.radians(5.0)
    train_seed: int = 1
    test_seed: int = 2
    test_id_offset: int = 1_000_000


@dataclass
class ManifestRecord:
    path: Path
    pose: PoseSE3
    scan_id: int | None = None


def _jittered_poses(shape: RouteShape, n: int, seed: int, spec: SplitSpec):
    rng = np.random.default_rng([seed, 101])
    s = np.sort(rng.uniform(0.0, shape.perimeter, size=n))
    pos, yaw = shape.at(s)
    normal = np.stack([-np.sin(yaw), np.cos(yaw)], axis=1)
    lateral = rng.uniform(-spec.jitter_radius, spec.jitter_radius, size=n)
    pos = pos + lateral[:, None] * normal
    yaw = yaw + rng.uniform(-spec.yaw_jitter, spec.yaw_jitter, size=n)
    return [PoseSE3(np.array([p[0], p[1], shape.height]), quat_from_yaw(float(y)))
            for p, y in zip(pos, yaw)]


def _render(args):
    scene, sensor, pose, scan_id, seed, path = args
    scan = raycast_scan(scene, sensor, pose, scan_id, seed)
    write_scan(path, scan)
    return str(path)


def make_dataset(scene: Scene, sensor: SensorModel, route: Trajectory, out_dir,
                 spec: SplitSpec = SplitSpec(), workers: int = 1) -> tuple[Path, Path]:
    """Render train and test traversals; returns the two manifest paths."""
    out_dir = Path(out_dir)
    (out_dir / "scans").mkdir(parents=True, exist_ok=True)
    shape = route.shape or RouteShape.for_scene(scene.radius)
    jobs = {}
    for split, n, seed, offset in (("train", spec.n_train, spec.train_seed, 0),
                                   ("test", spec.n_test, spec.test_seed, spec.test_id_offset)):
        poses = _jittered_poses(shape, n, seed, spec)
        jobs[split] = [(scene, sensor, pose, offset + i, seed,
                        out_dir / "scans" / f"{split}_{offset + i:07d}.bin")
                       for i, pose in enumerate(poses)]
    all_jobs = jobs["train"] + jobs["test"]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_render, all_jobs, chunksize=16))
    else:
        for job in all_jobs:
            _render(job)
    manifests = []
    for split in ("train", "test"):
        path = out_dir / f"{split}.tsv"
        write_manifest(path, [ManifestRecord(j[5], j[2], j[3]) for j in jobs[split]])
        manifests.append(path)
    return manifests[0], manifests[1]


def write_manifest(path, records: list[ManifestRecord]) -> None:
    path = Path(path)
    lines = []
    for rec in records:
        rel = os.path.relpath(rec.path, path.parent)
        vals = [*rec.pose.t.tolist(), *rec.pose.q.tolist()]
        lines.append("\t".join([rel] + ["%.17g" % v for v in vals]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 8:
            raise ValueError(f"{path}:{lineno}: expected 8 tab-separated fields, got {len(parts)}")
        vals = [float(v) for v in parts[1:]]
        records.append(ManifestRecord(path.parent / parts[0], PoseSE3(vals[:3], vals[3:])))
    return records
