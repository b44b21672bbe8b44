"""Point-cloud backbone: set abstraction followed by global graph attention.

Sampling and grouping only depend on coordinates, so they are computed once
per scan into a :class:`GroupPlan` and reused every epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensorcore as tc
from .nn import MLP, Module, glorot, param
from .tensorcore import Tensor

METRIC_MODES = ("off", "free", "symmetric", "pd", "riemannian")
PD_EPS = 1e-3


@dataclass(frozen=True)
class SaConfig:
    num_centroids: int
    radius: float
    max_neighbors: int
    mlp: tuple[int, ...]

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")
        if self.num_centroids < 1 or self.max_neighbors < 1:
            raise ValueError("centroid and neighbor counts must be positive")


@dataclass(frozen=True)
class GaConfig:
    num_heads: int = 8
    head_dim: int = 8
    metric: str = "off"

    def __post_init__(self):
        if self.num_heads < 1:
            raise ValueError("need at least one attention head")
        if self.metric not in METRIC_MODES:
            raise ValueError(f"unknown metric mode {self.metric!r}; choose from {METRIC_MODES}")

    @property
    def out_dim(self) -> int:
        return self.num_heads * self.head_dim


@dataclass(frozen=True)
class Saga3dConfig:
    layers: tuple[SaConfig, ...] = (
        SaConfig(64, 4.0, 16, (32, 64)),
        SaConfig(16, 8.0, 16, (64, 64)),
    )
    num_heads: int = 8
    range_scale: float = 10.0

    @property
    def out_dim(self) -> int:
        return self.layers[-1].mlp[-1]


# ---------------------------------------------------------------- geometry


def farthest_point_sample(points: np.ndarray, m: int) -> np.ndarray:
    """Greedy max-min selection seeded at index 0, lowest index wins ties."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if m > n:
        raise ValueError(f"cannot sample {m} centroids from {n} points")
    if m <= 0:
        return np.zeros(0, dtype=np.int64)
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = 0
    mind = np.sum((points - points[0]) ** 2, axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(mind))
        chosen[i] = nxt
        mind = np.minimum(mind, np.sum((points - points[nxt]) ** 2, axis=1))
    return chosen


def ball_group(points: np.ndarray, centroid_idx: np.ndarray, radius: float, max_k: int) -> np.ndarray:
    """``(m, max_k)`` neighbor indices, nearest first, closed ball, self-padded."""
    if radius <= 0:
        raise ValueError("ball radius must be positive")
    points = np.asarray(points, dtype=np.float64)
    centroid_idx = np.asarray(centroid_idx, dtype=np.int64)
    d2 = np.sum((points[centroid_idx][:, None, :] - points[None, :, :]) ** 2, axis=-1)
    order = np.argsort(d2, axis=1, kind="stable")[:, :max_k]
    within = np.take_along_axis(d2, order, axis=1) <= radius * radius
    out = np.repeat(centroid_idx[:, None], max_k, axis=1)
    out[:, :order.shape[1]] = np.where(within, order, centroid_idx[:, None])
    return out


@dataclass
class GroupLevel:
    centroid_idx: np.ndarray   # (m,) indices into the previous level
    neighbors: np.ndarray      # (m, k) indices into the previous level
    rel: np.ndarray            # (m, k, 3) neighbor offsets / radius
    coords: np.ndarray         # (m, 3) centroid coordinates


@dataclass
class GroupPlan:
    levels: list[GroupLevel] = field(default_factory=list)
    ranges: np.ndarray | None = None  # (N,) per-point input feature


def plan_groups(points: np.ndarray, cfg: Saga3dConfig) -> GroupPlan:
    points = np.asarray(points, dtype=np.float64)
    if len(points) < cfg.layers[0].num_centroids:
        raise ValueError(f"scan has {len(points)} points, need at least {cfg.layers[0].num_centroids}")
    plan = GroupPlan(ranges=np.linalg.norm(points, axis=1) / cfg.range_scale)
    coords = points
    for sa in cfg.layers:
        if len(coords) < sa.num_centroids:
            raise ValueError(f"level has {len(coords)} points, need {sa.num_centroids}")
        cidx = farthest_point_sample(coords, sa.num_centroids)
        nbr = ball_group(coords, cidx, sa.radius, sa.max_neighbors)
        rel = (coords[nbr] - coords[cidx][:, None, :]) / sa.radius
        plan.levels.append(GroupLevel(cidx, nbr, rel, coords[cidx]))
        coords = coords[cidx]
    return plan


# ---------------------------------------------------------------- layers


class Metric(Module):
    """Learnable attention metric ``M`` with optional structural constraint."""

    def __init__(self, dim: int, mode: str = "free"):
        self.mode = mode
        eye = np.eye(dim)
        if mode in ("free", "symmetric"):
            self.raw = param(eye.copy())
        elif mode in ("pd", "riemannian"):
            self.factor = param(eye * np.sqrt(1.0 - PD_EPS))
            if mode == "pd":
                self.skew = param(np.zeros((dim, dim)))
        else:
            raise ValueError(f"metric mode {mode!r} has no matrix")

    def matrix(self) -> Tensor:
        if self.mode == "free":
            return self.raw
        if self.mode == "symmetric":
            return 0.5 * (self.raw + self.raw.T)
        dim = self.factor.shape[0]
        m = tc.matmul(self.factor, self.factor.T) + PD_EPS * np.eye(dim)
        if self.mode == "pd":
            m = m + (self.skew - self.skew.T)
        return m


class GaLayer(Module):
    """Multi-head attention over a complete graph of nodes.

    Logits are ``P_k M P_k^T`` without temperature scaling; ``M`` is the
    identity when the metric is off.
    """

    def __init__(self, rng: np.random.Generator, c_in: int, cfg: GaConfig):
        self.cfg = cfg
        self.weight = glorot(rng, c_in, cfg.out_dim)
        self.bias = param(np.zeros(cfg.out_dim))
        self.metric = Metric(cfg.head_dim, cfg.metric) if cfg.metric != "off" else None
        self.last_attention: np.ndarray | None = None

    def __call__(self, x, metric: Tensor | None = None) -> Tensor:
        return ga_layer(x, self, metric)


def ga_layer(x, layer: GaLayer, metric=None) -> Tensor:
    """``(..., n, c) -> (..., n, K*d)``; an explicit ``metric`` overrides the layer's."""
    x = tc.as_tensor(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape((1,) + x.shape)
    B, n, _ = x.shape
    K, d = layer.cfg.num_heads, layer.cfg.head_dim
    p = tc.matmul(x, layer.weight) + layer.bias
    heads = p.reshape(B, n, K, d).transpose(0, 2, 1, 3)  # (B, K, n, d)
    if metric is None and layer.metric is not None:
        metric = layer.metric.matrix()
    left = heads if metric is None else tc.matmul(heads, metric)
    attn = tc.row_softmax(tc.matmul(left, heads.transpose(0, 1, 3, 2)))
    layer.last_attention = attn.data
    out = tc.matmul(attn, heads).transpose(0, 2, 1, 3).reshape(B, n, K * d)
    return out.reshape(n, K * d) if squeeze else out


class SaLayer(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, cfg: SaConfig):
        self.cfg = cfg
        self.mlp = MLP(rng, [3 + c_in, *cfg.mlp], final_act=True)

    def __call__(self, grouped) -> Tensor:
        """``grouped`` is ``(..., m, k, 3 + c_in)``; returns ``(..., m, C_out)``."""
        return tc.tmax(self.mlp(grouped), axis=-2)


def sa_layer(features, points: np.ndarray, layer: SaLayer):
    """Single-scan set abstraction: returns centroid features and coordinates."""
    features = tc.as_tensor(features)
    points = np.asarray(points, dtype=np.float64)
    if features.shape[0] != len(points):
        raise ValueError(f"{features.shape[0]} feature rows for {len(points)} points")
    cfg = layer.cfg
    cidx = farthest_point_sample(points, cfg.num_centroids)
    nbr = ball_group(points, cidx, cfg.radius, cfg.max_neighbors)
    rel = (points[nbr] - points[cidx][:, None, :]) / cfg.radius
    grouped = tc.concat([tc.Tensor(rel), features[nbr]], axis=-1)
    return layer(grouped), points[cidx]


class Saga3dStack(Module):
    def __init__(self, rng: np.random.Generator, cfg: Saga3dConfig = Saga3dConfig(), metric: str = "off"):
        self.cfg = cfg
        self.sa = []
        self.ga = []
        c = 1
        for sa_cfg in cfg.layers:
            self.sa.append(SaLayer(rng, c, sa_cfg))
            c = sa_cfg.mlp[-1]
            if c % cfg.num_heads:
                raise ValueError(f"width {c} not divisible by {cfg.num_heads} heads")
            ga_cfg = GaConfig(cfg.num_heads, c // cfg.num_heads, metric)
            self.ga.append(GaLayer(rng, c, ga_cfg))

    @property
    def out_dim(self) -> int:
        return self.cfg.out_dim

    def __call__(self, plans: list[GroupPlan]) -> Tensor:
        return encode3d_batch(plans, self)


def encode3d_batch(plans: list[GroupPlan], stack: Saga3dStack) -> Tensor:
    """Run the SAGA stack on a batch of pre-grouped scans -> ``(B, N3D, C)``."""
    grouped = np.stack([
        np.concatenate([p.levels[0].rel, p.ranges[p.levels[0].neighbors][..., None]], axis=-1)
        for p in plans
    ])
    feats = stack.ga[0](stack.sa[0](Tensor(grouped)))
    for li in range(1, len(stack.sa)):
        rel = Tensor(np.stack([p.levels[li].rel for p in plans]))
        nbr = np.stack([p.levels[li].neighbors for p in plans])
        grouped = tc.concat([rel, tc.gather_rows(feats, nbr)], axis=-1)
        feats = stack.ga[li](stack.sa[li](grouped))
    return feats


def encode3d(scan, stack: Saga3dStack) -> Tensor:
    """Encode one scan (``LidarScan`` or ``(N, 3)`` array) to ``(N3D, C)`` features."""
    points = scan.points if hasattr(scan, "points") else np.asarray(scan)
    plan = plan_groups(points, stack.cfg)
    out = encode3d_batch([plan], stack)
    return out.reshape(out.shape[1:])
