"""Poincare-ball operators built from differentiable tensor ops.

Points live on the last axis; any leading axes are batch axes.  The ball is
``{x : c |x|^2 < 1}``.  Inputs and outputs of every operator are clamped to
radius ``(1 - eps_boundary) / sqrt(c)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .tensorcore import Tensor

MIN_DENOM = 1e-12
MIN_TANGENT_NORM = 1e-12


@dataclass(frozen=True)
class BallConfig:
    c: float = 1.0
    eps_boundary: float = 1e-5
    dim: int | None = None

    def __post_init__(self):
        if self.c < 0:
            raise ValueError(f"curvature parameter must be >= 0, got {self.c}")
        if not 0 < self.eps_boundary < 1:
            raise ValueError(f"eps_boundary must lie in (0, 1), got {self.eps_boundary}")

    @property
    def max_norm(self) -> float:
        return math.inf if self.c == 0 else (1.0 - self.eps_boundary) / math.sqrt(self.c)


def _dot(x: Tensor, y: Tensor) -> Tensor:
    return tc.tsum(x * y, axis=-1, keepdims=True)


def project_to_ball(x, cfg: BallConfig) -> Tensor:
    """Radially rescale points with ``c|x|^2 > (1-eps)^2`` onto the clamp radius."""
    x = tc.as_tensor(x)
    if cfg.c == 0:
        return x
    sq = np.sum(x.data * x.data, axis=-1, keepdims=True)
    outside = cfg.c * sq > (1.0 - cfg.eps_boundary) ** 2
    if not outside.any():
        return x
    safe_sq = np.where(outside, sq, 1.0)
    norm = tc.sqrt(tc.where(outside, tc.norm_sq(x), Tensor(safe_sq)))
    factor = tc.where(outside, cfg.max_norm / norm, Tensor(np.ones_like(sq)))
    return x * factor


def mobius_add(x, y, cfg: BallConfig) -> Tensor:
    """Mobius addition ``x (+)_c y``."""
    c = cfg.c
    x = project_to_ball(x, cfg)
    y = project_to_ball(y, cfg)
    xy = _dot(x, y)
    x2 = tc.norm_sq(x)
    y2 = tc.norm_sq(y)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    den = 1.0 + 2.0 * c * xy + (c * c) * x2 * y2
    if np.any(np.abs(den.data) < MIN_DENOM):
        raise FloatingPointError("Mobius addition denominator is numerically zero")
    return project_to_ball(num / den, cfg)


def conformal_factor(x, cfg: BallConfig) -> Tensor:
    """``2 / (1 - c|x|^2)`` with a trailing singleton axis."""
    x = project_to_ball(x, cfg)
    return 2.0 / (1.0 - cfg.c * tc.norm_sq(x))


def exp_map(x, v, cfg: BallConfig) -> Tensor:
    """Exponential map at base point ``x`` applied to tangent vector ``v``."""
    v = tc.as_tensor(v)
    x = project_to_ball(x, cfg)
    sq = np.sum(v.data * v.data, axis=-1, keepdims=True)
    tiny = sq < MIN_TANGENT_NORM ** 2
    if cfg.c == 0:
        return x + v
    if tiny.all():
        return mobius_add(x, v * 0.0, cfg)
    sc = math.sqrt(cfg.c)
    vnorm = tc.sqrt(tc.where(tiny, Tensor(np.ones_like(sq)), tc.norm_sq(v)))
    lam = conformal_factor(x, cfg)
    coef = tc.tanh(sc * lam * vnorm / 2.0) / (sc * vnorm)
    coef = tc.where(tiny, Tensor(np.zeros_like(sq)), coef)
    return mobius_add(x, coef * v, cfg)


def exp_map0(v, cfg: BallConfig) -> Tensor:
    """Exponential map at the origin: ``tanh(sqrt(c)|v|) v / (sqrt(c)|v|)``."""
    v = tc.as_tensor(v)
    if cfg.c == 0:
        return v
    sq = np.sum(v.data * v.data, axis=-1, keepdims=True)
    tiny = sq < MIN_TANGENT_NORM ** 2
    sc = math.sqrt(cfg.c)
    vnorm = tc.sqrt(tc.where(tiny, Tensor(np.ones_like(sq)), tc.norm_sq(v)))
    coef = tc.tanh(sc * vnorm) / (sc * vnorm)
    coef = tc.where(tiny, Tensor(np.ones_like(sq)), coef)
    return project_to_ball(coef * v, cfg)


def poincare_distance(x, y, cfg: BallConfig) -> Tensor:
    """Geodesic distance ``(2/sqrt c) artanh(sqrt c |(-x) (+) y|)``."""
    if cfg.c == 0:
        raise ValueError("poincare_distance is undefined for c = 0; use 2*|x - y| as the flat limit")
    sc = math.sqrt(cfg.c)
    diff = mobius_add(-tc.as_tensor(x), y, cfg)
    sq = tc.norm_sq(diff)
    zero = sq.data <= 0.0
    norm = tc.sqrt(tc.where(zero, Tensor(np.ones_like(sq.data)), sq))
    norm = tc.where(zero, Tensor(np.zeros_like(sq.data)), norm)
    return (2.0 / sc) * tc.arctanh(sc * norm)
