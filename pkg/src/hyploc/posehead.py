"""Poses, log-quaternions, regression heads and the learnable-weighted loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .nn import MLP, Module, param
from .tensorcore import Tensor

LOSS_NORM_EPS = 1e-12


def fix_hemisphere(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    sign = np.where(q[..., :1] < 0, -1.0, 1.0)
    return q * sign


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return fix_hemisphere(np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis]))


def quat_from_yaw(yaw: float) -> np.ndarray:
    return quat_from_axis_angle([0.0, 0.0, 1.0], yaw)


@dataclass
class PoseSE3:
    t: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        q = np.asarray(self.q, dtype=np.float64).reshape(4)
        n = np.linalg.norm(q)
        if n == 0 or not np.isfinite(n):
            raise ValueError("quaternion must be finite and nonzero")
        if abs(n - 1.0) > 1e-9:
            q = q / n
        self.q = fix_hemisphere(q)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map sensor-frame points into the world frame."""
        return np.asarray(points) @ self.rotation.T + self.t

    def inverse_transform(self, points: np.ndarray) -> np.ndarray:
        """Map world-frame points into the sensor frame."""
        return (np.asarray(points) - self.t) @ self.rotation

    def logq(self) -> np.ndarray:
        return quat_to_logquat(self.q)


def quat_to_logquat(q) -> np.ndarray:
    """``v/|v| * arccos(w)`` after flipping to ``w >= 0``; batched over leading axes."""
    q = fix_hemisphere(quat_normalize(q))
    w = np.clip(q[..., :1], -1.0, 1.0)
    v = q[..., 1:]
    vn = np.linalg.norm(v, axis=-1, keepdims=True)
    ang = np.arccos(w)
    # arccos(w)/|v| -> 1 as |v| -> 0
    safe = vn > 1e-12
    coef = np.where(safe, ang / np.where(safe, vn, 1.0), 1.0)
    return v * coef


def logquat_to_quat(lq) -> np.ndarray:
    lq = np.asarray(lq, dtype=np.float64)
    n = np.linalg.norm(lq, axis=-1, keepdims=True)
    safe = n > 1e-12
    sinc = np.where(safe, np.sin(n) / np.where(safe, n, 1.0), 1.0)
    q = np.concatenate([np.cos(n), sinc * lq], axis=-1)
    return fix_hemisphere(quat_normalize(q))


class PoseHead(Module):
    """Global average pooling followed by parallel translation / rotation MLPs."""

    def __init__(self, rng: np.random.Generator, c_in: int, hidden: int = 64):
        self.trans = MLP(rng, [c_in, hidden, 3])
        self.rot = MLP(rng, [c_in, hidden, 3])

    def zero_(self) -> "PoseHead":
        for p in self.parameters():
            p.data[...] = 0.0
        return self

    def __call__(self, features) -> tuple[Tensor, Tensor]:
        return regress_pose(features, self)


def regress_pose(features, head: PoseHead) -> tuple[Tensor, Tensor]:
    """``(B, n, C)`` or ``(n, C)`` features -> translation and log-quaternion, each ``(B, 3)`` or ``(3,)``."""
    features = tc.as_tensor(features)
    if features.ndim < 2 or features.shape[-2] == 0:
        raise ValueError(f"regress_pose needs non-empty feature rows, got shape {features.shape}")
    pooled = tc.mean_pool(features)  # (..., 1, C)
    if features.ndim == 2:
        return head.trans(pooled).reshape(3), head.rot(pooled).reshape(3)
    pooled = pooled.reshape(pooled.shape[:-2] + (pooled.shape[-1],))
    return head.trans(pooled), head.rot(pooled)


class LossParams(Module):
    def __init__(self, lam: float = 0.0, gamma: float = -3.0):
        self.lam = param(lam)
        self.gamma = param(gamma)


def _smooth_norm(diff: Tensor) -> Tensor:
    return tc.sqrt(tc.norm_sq(diff, keepdims=False) + LOSS_NORM_EPS)


def hyploc_loss(preds, t_target, r_target, lp: LossParams) -> Tensor:
    """Sum of head errors weighted by ``exp(-lam)``/``exp(-gamma)`` plus the regularisers.

    ``preds`` is a sequence of ``(t, r)`` pairs; targets broadcast against them.
    Batched inputs are averaged over the batch axis.
    """
    t_target = tc.as_tensor(t_target)
    r_target = tc.as_tensor(r_target)
    t_err = sum(_smooth_norm(t - t_target) for t, _ in preds)
    r_err = sum(_smooth_norm(r - r_target) for _, r in preds)
    per_sample = t_err * tc.exp(-lp.lam) + lp.lam + r_err * tc.exp(-lp.gamma) + lp.gamma
    return tc.tmean(per_sample)


def pose_metrics(pred: PoseSE3, target: PoseSE3) -> tuple[float, float]:
    """Translation error in meters and rotation error in degrees."""
    t_err = float(np.linalg.norm(pred.t - target.t))
    dot = min(1.0, abs(float(np.dot(quat_normalize(pred.q), quat_normalize(target.q)))))
    return t_err, float(np.degrees(2.0 * np.arccos(dot)))
