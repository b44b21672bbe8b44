import math

import numpy as np
import pytest

from hyploc import tensorcore as tc
from hyploc.hypmath import (BallConfig, conformal_factor, exp_map, exp_map0, mobius_add, poincare_distance,
                            project_to_ball)
from hyploc.tensorcore import Tensor, grad_check

C1 = BallConfig(c=1.0)


def random_ball_points(rng, n, dim=3, c=1.0, max_frac=0.9):
    v = rng.normal(size=(n, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = rng.uniform(0, max_frac, size=(n, 1)) / math.sqrt(c)
    return v * r


def velocity_add(a, b):
    return (a + b) / (1 + a * b)


class TestMobius:
    def test_identity_element(self):
        x = np.array([0.2, -0.3, 0.1])
        np.testing.assert_allclose(mobius_add(x, np.zeros(3), C1).data, x, atol=1e-12)
        np.testing.assert_allclose(mobius_add(np.zeros(3), x, C1).data, x, atol=1e-12)

    def test_collinear_example(self):
        np.testing.assert_allclose(mobius_add([0.3, 0.0], [0.4, 0.0], C1).data, [0.625, 0.0], atol=1e-15)

    def test_flat_limit(self):
        out = mobius_add([0.3, 0.5], [0.4, -0.2], BallConfig(c=0.0)).data
        np.testing.assert_allclose(out, [0.7, 0.3], atol=1e-15)

    def test_identity_sweep(self):
        pts = random_ball_points(np.random.default_rng(0), 1000)
        zero = np.zeros_like(pts)
        np.testing.assert_allclose(mobius_add(pts, zero, C1).data, pts, atol=1e-12)
        np.testing.assert_allclose(mobius_add(zero, pts, C1).data, pts, atol=1e-12)

    def test_collinear_sweep(self):
        rng = np.random.default_rng(1)
        direction = rng.normal(size=(1000, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        a = rng.uniform(-0.95, 0.95, size=(1000, 1))
        b = rng.uniform(-0.95, 0.95, size=(1000, 1))
        out = mobius_add(a * direction, b * direction, C1).data
        signed = np.sum(out * direction, axis=1)
        np.testing.assert_allclose(signed, velocity_add(a, b)[:, 0], atol=1e-9)

    def test_closure(self):
        rng = np.random.default_rng(2)
        x = random_ball_points(rng, 500, max_frac=0.99999)
        y = random_ball_points(rng, 500, max_frac=0.99999)
        out = mobius_add(x, y, C1).data
        assert np.all(np.sum(out ** 2, axis=1) < 1.0)

    def test_gradient(self):
        rng = np.random.default_rng(3)
        w = rng.normal(size=3)
        for _ in range(10):
            x, y = random_ball_points(rng, 2, max_frac=0.8)
            assert grad_check(lambda t: tc.tsum(mobius_add(t, Tensor(y), C1) * w), x) < 1e-6
            assert grad_check(lambda t: tc.tsum(mobius_add(Tensor(x), t, C1) * w), y) < 1e-6


class TestConformalFactor:
    def test_origin(self):
        assert conformal_factor(np.zeros(3), C1).item() == 2.0

    def test_half_radius(self):
        assert conformal_factor([0.5, 0.0], C1).item() == pytest.approx(8 / 3, abs=1e-15)

    def test_flat(self):
        assert conformal_factor([3.0, 4.0], BallConfig(c=0.0)).item() == 2.0


class TestExpMap:
    def test_zero_tangent(self):
        np.testing.assert_array_equal(exp_map(np.zeros(2), np.zeros(2), C1).data, np.zeros(2))

    def test_origin_closed_form(self):
        np.testing.assert_allclose(exp_map(np.zeros(2), [1.0, 0.0], C1).data, [math.tanh(1.0), 0.0], atol=1e-15)
        np.testing.assert_allclose(exp_map0([1.0, 0.0], C1).data, [math.tanh(1.0), 0.0], atol=1e-15)

    def test_direction_preserved(self):
        rng = np.random.default_rng(4)
        v = rng.normal(size=(100, 4)) * 3
        out = exp_map0(v, C1).data
        cos = np.sum(out * v, axis=1) / (np.linalg.norm(out, axis=1) * np.linalg.norm(v, axis=1))
        np.testing.assert_allclose(cos, 1.0, atol=1e-12)

    def test_general_base_matches_origin_form(self):
        v = np.random.default_rng(5).normal(size=(10, 3))
        np.testing.assert_allclose(exp_map(np.zeros_like(v), v, C1).data, exp_map0(v, C1).data, atol=1e-12)

    def test_closure(self):
        rng = np.random.default_rng(6)
        x = random_ball_points(rng, 300, max_frac=0.99)
        v = rng.normal(size=(300, 3)) * 20
        for out in (exp_map(x, v, C1).data, exp_map0(v, C1).data):
            assert np.all(np.sum(out ** 2, axis=1) < 1.0)

    def test_gradient(self):
        rng = np.random.default_rng(7)
        w = rng.normal(size=3)
        for _ in range(10):
            x = random_ball_points(rng, 1, max_frac=0.8)[0]
            v = rng.normal(size=3)
            assert grad_check(lambda t: tc.tsum(exp_map(Tensor(x), t, C1) * w), v) < 1e-6
            assert grad_check(lambda t: tc.tsum(exp_map(t, Tensor(v), C1) * w), x) < 1e-6
            assert grad_check(lambda t: tc.tsum(exp_map0(t, C1) * w), v) < 1e-6


class TestDistance:
    def test_self(self):
        assert poincare_distance([0.3, 0.2], [0.3, 0.2], C1).item() == 0.0

    def test_closed_form(self):
        assert poincare_distance([0.0, 0.0], [0.5, 0.0], C1).item() == pytest.approx(2 * math.atanh(0.5), abs=1e-12)

    def test_flat_curvature_rejected(self):
        with pytest.raises(ValueError, match="c = 0"):
            poincare_distance([0.1], [0.2], BallConfig(c=0.0))

    def test_symmetry_sweep(self):
        rng = np.random.default_rng(8)
        x, y = random_ball_points(rng, 1000), random_ball_points(rng, 1000)
        np.testing.assert_allclose(poincare_distance(x, y, C1).data, poincare_distance(y, x, C1).data, atol=1e-9)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(9)
        x, y, z = (random_ball_points(rng, 1000) for _ in range(3))
        dxz = poincare_distance(x, z, C1).data
        dxy = poincare_distance(x, y, C1).data
        dyz = poincare_distance(y, z, C1).data
        assert np.all(dxz <= dxy + dyz + 1e-9)
        assert np.all(dxy >= 0)

    def test_flat_limit_scaling(self):
        rng = np.random.default_rng(10)
        cfg = BallConfig(c=1e-8)
        x, y = rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
        d = poincare_distance(x, y, cfg).data[:, 0]
        np.testing.assert_allclose(d, 2 * np.linalg.norm(x - y, axis=1), rtol=1e-3)

    def test_gradient(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            x, y = random_ball_points(rng, 2, max_frac=0.8)
            assert grad_check(lambda t: tc.tsum(poincare_distance(t, Tensor(y), C1)), x) < 1e-6


class TestProjection:
    def test_interior_unchanged(self):
        x = np.array([0.3, 0.4])
        np.testing.assert_array_equal(project_to_ball(x, C1).data, x)

    def test_rescale(self):
        np.testing.assert_allclose(project_to_ball([2.0, 0.0], C1).data, [0.99999, 0.0], atol=1e-15)

    def test_origin(self):
        np.testing.assert_array_equal(project_to_ball(np.zeros(3), C1).data, np.zeros(3))

    def test_curvature_validation(self):
        with pytest.raises(ValueError):
            BallConfig(c=-1.0)
