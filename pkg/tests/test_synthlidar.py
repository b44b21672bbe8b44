import math
import struct

import numpy as np
import pytest

from hyploc.posehead import PoseSE3, quat_from_yaw
from hyploc.projection import LidarScan
from hyploc.synthlidar import (RouteShape, ScanFormatError, Scene, SensorModel, SplitSpec, decode_scan, make_dataset,
                               make_route, raycast_scan, read_manifest, read_scan, write_scan)


def bare_scene(radius=20.0, boxes=()):
    return Scene(np.array(boxes, dtype=float).reshape(-1, 2, 3), radius)


@pytest.fixture(scope="module")
def small_world():
    scene = Scene.generate(seed=3, radius=20.0, num_boxes=6)
    sensor = SensorModel(num_beams=4, azimuth_samples=24)
    return scene, sensor, make_route(scene, 40)


class TestRaycast:
    def test_downward_beam_over_ground(self):
        sensor = SensorModel(num_beams=1, phi_min=-math.pi / 4, phi_max=-math.pi / 4, azimuth_samples=8,
                             noise_sigma=0.0)
        scan = raycast_scan(bare_scene(), sensor, PoseSE3([0.0, 0.0, 1.0], [1.0, 0, 0, 0]))
        assert len(scan) == 8
        np.testing.assert_allclose(np.linalg.norm(scan.points, axis=1), math.sqrt(2.0), atol=1e-12)

    def test_determinism(self, small_world):
        scene, sensor, route = small_world
        a = raycast_scan(scene, sensor, route.poses[5], scan_id=5)
        b = raycast_scan(scene, sensor, route.poses[5], scan_id=5)
        assert a == b
        c = raycast_scan(scene, sensor, route.poses[5], scan_id=6)
        assert c.points.tobytes() != a.points.tobytes()

    def test_box_beyond_range(self):
        sensor = SensorModel(num_beams=3, phi_min=0.0, phi_max=0.2, azimuth_samples=16, max_range=10.0,
                             noise_sigma=0.0)
        far_box = [[[14.0, -1.0, 0.0], [15.0, 1.0, 5.0]]]
        near_box = [[[4.0, -1.0, 0.0], [5.0, 1.0, 5.0]]]
        pose = PoseSE3([0.0, 0.0, 1.0], [1.0, 0, 0, 0])
        with pytest.raises(ValueError, match="degenerate"):
            raycast_scan(bare_scene(boxes=far_box), sensor, pose)
        hits = raycast_scan(bare_scene(boxes=near_box), sensor, pose)
        assert np.all(np.abs(hits.points[:, 0] - 4.0) < 1e-9)

    def test_ranges_bounded(self, small_world):
        scene, sensor, route = small_world
        for i in range(0, 40, 7):
            r = np.linalg.norm(raycast_scan(scene, sensor, route.poses[i], scan_id=i).points, axis=1)
            assert np.all(r > 0) and np.all(r <= sensor.max_range)

    def test_pose_outside_scene(self):
        with pytest.raises(ValueError):
            raycast_scan(bare_scene(5.0), SensorModel(), PoseSE3([10.0, 0.0, 1.0], [1.0, 0, 0, 0]))

    def test_frame_consistency(self):
        # a quarter turn keeps the inversely transformed box axis-aligned
        box = np.array([[3.0, 1.0, 0.0], [5.0, 4.0, 3.0]])
        pose = PoseSE3([1.0, -2.0, 1.5], quat_from_yaw(math.pi / 2))
        sensor = SensorModel(num_beams=8, azimuth_samples=90, noise_sigma=0.0)
        scan = raycast_scan(bare_scene(boxes=[box]), sensor, pose)
        corners = pose.inverse_transform(box)
        local_box = np.stack([corners.min(axis=0), corners.max(axis=0)])
        local = Scene(local_box[None], 20.0, ground_z=-pose.t[2])
        ref = raycast_scan(local, sensor, PoseSE3.identity())
        assert len(ref) == len(scan)
        np.testing.assert_allclose(pose.transform(scan.points), pose.transform(ref.points), atol=1e-9)


class TestRoute:
    def test_closed_and_inside(self, small_world):
        scene, _, route = small_world
        assert np.max(np.abs(route.poses[0].t - route.poses[-1].t)) < 1e-9
        assert np.max(np.abs(route.poses[0].q - route.poses[-1].q)) < 1e-9
        t = route.translations()
        assert np.all(np.linalg.norm(t[:, :2], axis=1) < scene.radius)

    def test_step_bound_and_hemisphere(self, small_world):
        _, _, route = small_world
        t = route.translations()
        step = route.shape.perimeter / (len(t) - 1)
        assert np.all(np.linalg.norm(np.diff(t, axis=0), axis=1) <= step + 1e-9)
        assert all(p.q[0] >= 0 for p in route.poses)

    def test_heading_tangent(self):
        shape = RouteShape(8.0, 5.0, 2.0)
        s = np.linspace(0, shape.perimeter, 50, endpoint=False)
        pos, yaw = shape.at(s)
        ahead, _ = shape.at(s + 1e-6)
        tangent = (ahead - pos) / 1e-6
        np.testing.assert_allclose(tangent, np.stack([np.cos(yaw), np.sin(yaw)], axis=1), atol=1e-5)

    def test_seeds(self):
        scene = bare_scene()
        a, b = make_route(scene, 30, seed=1), make_route(scene, 30, seed=2)
        assert not np.allclose(a.translations(), b.translations())
        for r in (a, b):
            assert np.all(np.linalg.norm(r.translations()[:, :2], axis=1) < scene.radius)
            assert np.allclose(r.poses[0].t, r.poses[-1].t)

    def test_too_short(self):
        with pytest.raises(ValueError):
            make_route(bare_scene(), 1)


def random_scan(rng, scan_id):
    pts = rng.normal(size=(int(rng.integers(1, 50)), 3)) * 10
    q = rng.normal(size=4)
    return LidarScan(pts, PoseSE3(rng.normal(size=3), q), scan_id)


class TestScanFormat:
    def test_round_trip_many(self, tmp_path):
        rng = np.random.default_rng(0)
        path = tmp_path / "s.bin"
        for i in range(1000):
            scan = random_scan(rng, int(rng.integers(0, 2 ** 63)))
            write_scan(path, scan)
            assert read_scan(path) == scan

    def test_header_layout(self, tmp_path):
        scan = LidarScan([[1.0, 2.0, 3.0]], PoseSE3([4.0, 5.0, 6.0], [1.0, 0, 0, 0]), 42)
        write_scan(tmp_path / "s.bin", scan)
        raw = (tmp_path / "s.bin").read_bytes()
        assert raw[:4] == b"HLLS"
        assert struct.unpack_from("<IQI", raw, 4) == (1, 42, 1)
        assert struct.unpack_from("<7d", raw, 20) == (4.0, 5.0, 6.0, 1.0, 0.0, 0.0, 0.0)
        assert struct.unpack_from("<3d", raw, 76) == (1.0, 2.0, 3.0)
        assert len(raw) == 100

    def _raw(self):
        header = struct.pack("<4sIQI7d", b"HLLS", 1, 3, 2, 0, 0, 0, 1, 0, 0, 0)
        return header + np.arange(1.0, 7.0).astype("<f8").tobytes()

    def test_truncated_points(self):
        raw = self._raw()
        with pytest.raises(ScanFormatError, match=r"\[120, 124\)"):
            decode_scan(raw[:120])

    def test_truncated_header(self):
        with pytest.raises(ScanFormatError, match=r"\[30, 76\)"):
            decode_scan(self._raw()[:30])

    def test_bad_magic(self):
        raw = bytearray(self._raw())
        raw[:4] = b"XXXX"
        struct.pack_into("<I", raw, 16, 2 ** 32 - 1)  # absurd count never reached
        with pytest.raises(ScanFormatError, match="magic.*byte 0"):
            decode_scan(bytes(raw))

    def test_bad_version(self):
        raw = bytearray(self._raw())
        struct.pack_into("<I", raw, 4, 9)
        with pytest.raises(ScanFormatError, match="version 9 at byte 4"):
            decode_scan(bytes(raw))

    def test_trailing_bytes(self):
        with pytest.raises(ScanFormatError, match="trailing"):
            decode_scan(self._raw() + b"\0")


class TestDataset:
    def test_manifests(self, small_world, tmp_path):
        scene, sensor, route = small_world
        spec = SplitSpec(n_train=12, n_test=6)
        train, test = make_dataset(scene, sensor, route, tmp_path, spec)
        tr, te = read_manifest(train), read_manifest(test)
        assert len(tr) == 12 and len(te) == 6
        ids = {}
        for split, recs in (("train", tr), ("test", te)):
            ids[split] = set()
            for rec in recs:
                scan = read_scan(rec.path)
                np.testing.assert_array_equal(scan.pose.t, rec.pose.t)
                ids[split].add(scan.scan_id)
        assert not ids["train"] & ids["test"]
        line = train.read_text().splitlines()[0].split("\t")
        assert len(line) == 8 and float(line[1]) == tr[0].pose.t[0]

    def test_jitter_bound(self, small_world, tmp_path):
        scene, sensor, route = small_world
        spec = SplitSpec(n_train=2, n_test=30)
        _, test = make_dataset(scene, sensor, route, tmp_path, spec)
        dense, _ = route.shape.sample(20000)
        for rec in read_manifest(test):
            gap = np.min(np.linalg.norm(dense - rec.pose.t[:2], axis=1))
            assert gap <= spec.jitter_radius + 0.01

    def test_parallel_matches_serial(self, small_world, tmp_path):
        scene, sensor, route = small_world
        spec = SplitSpec(n_train=6, n_test=3)
        a = make_dataset(scene, sensor, route, tmp_path / "a", spec, workers=1)
        b = make_dataset(scene, sensor, route, tmp_path / "b", spec, workers=2)
        for ma, mb in zip(a, b):
            assert ma.read_text() == mb.read_text()
            for ra, rb in zip(read_manifest(ma), read_manifest(mb)):
                assert ra.path.read_bytes() == rb.path.read_bytes()
