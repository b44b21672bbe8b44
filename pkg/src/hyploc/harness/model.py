"""The full localisation network: per-modality encoders, fusion stack and heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensorcore as tc
from ..encoder2d import ConvStack, ConvStackConfig
from ..encoder3d import GroupPlan, SaConfig, Saga3dConfig, Saga3dStack, encode3d_batch, plan_groups
from ..fusion import FusionStack, TokenSet
from ..hypmath import BallConfig
from ..nn import Module
from ..posehead import LossParams, PoseHead, hyploc_loss, regress_pose
from ..projection import LidarScan, bev_project, spherical_project
from .config import RunConfig

FUSION_HEAD = "fusion"


@dataclass
class Sample:
    """Everything the network needs from one scan, precomputed once."""

    scan_id: int
    plan: GroupPlan | None
    sph: np.ndarray | None
    bev: np.ndarray | None
    t: np.ndarray
    r: np.ndarray
    q: np.ndarray


def saga_config(cfg: RunConfig) -> Saga3dConfig:
    layers = []
    m, radius = cfg.sa_centroids, cfg.sa_radius
    mlp_in = (cfg.width // 2, cfg.width)
    for i in range(cfg.saga_layers):
        layers.append(SaConfig(m, radius, cfg.sa_neighbors, mlp_in if i == 0 else (cfg.width, cfg.width)))
        m, radius = max(1, m // 4), radius * 2
    return Saga3dConfig(tuple(layers), cfg.heads)


def conv_config(cfg: RunConfig) -> ConvStackConfig:
    return ConvStackConfig(((16, 3, 2), (32, 3, 2), (cfg.width, 3, 2)))


def prepare_sample(scan: LidarScan, cfg: RunConfig) -> Sample:
    mods = cfg.modality_list
    plan = plan_groups(scan.points, saga_config(cfg)) if "3D" in mods else None
    sph = spherical_project(scan, cfg.sph_height, cfg.sph_width).values if "sph" in mods else None
    bev = None
    if "bev" in mods:
        bev = bev_project(scan, cfg.bev_height, cfg.bev_width, cfg.scene_radius, cfg.scene_radius).values
    return Sample(int(scan.scan_id), plan, sph, bev, scan.pose.t.copy(), scan.pose.logq(), scan.pose.q.copy())


class HypLiLoc(Module):
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 2024])
        mods = cfg.modality_list
        self.encoders = {}
        self.heads = {}
        for name in mods:
            if name == "3D":
                self.encoders[name] = Saga3dStack(rng, saga_config(cfg))
            else:
                self.encoders[name] = ConvStack(rng, conv_config(cfg))
            self.heads[name] = PoseHead(rng, cfg.width, cfg.head_hidden)
        self.fusion = None
        if len(mods) > 1:
            ball = BallConfig(cfg.curvature, 1e-5, cfg.width)
            self.fusion = FusionStack(rng, cfg.width, cfg.heads, mods, cfg.ffb_blocks, cfg.metric,
                                      cfg.euclidean, cfg.hyperbolic, ball)
            self.heads[FUSION_HEAD] = PoseHead(rng, cfg.width, cfg.head_hidden)
        self.loss_params = LossParams()
        # fixed affine map from head output to meters, set from the training split
        self.t_offset = np.zeros(3)
        self.t_scale = 1.0

    @property
    def final_head(self) -> str:
        return FUSION_HEAD if self.fusion is not None else self.cfg.modality_list[0]

    def set_translation_frame(self, translations: np.ndarray) -> None:
        translations = np.asarray(translations, dtype=np.float64)
        self.t_offset = translations.mean(axis=0)
        self.t_scale = float(max(translations.std(axis=0).max(), 1e-6))

    def features(self, batch: list[Sample]):
        feats = {}
        grids = {}
        for name, enc in self.encoders.items():
            if name == "3D":
                feats[name] = encode3d_batch([s.plan for s in batch], enc)
            else:
                imgs = np.stack([getattr(s, name) for s in batch])
                feats[name], grids[name] = enc(imgs)
        fused: TokenSet | None = self.fusion(feats, grids) if self.fusion is not None else None
        return feats, fused

    def forward(self, batch: list[Sample]) -> dict[str, tuple[tc.Tensor, tc.Tensor]]:
        feats, fused = self.features(batch)
        preds = {}
        for name, f in feats.items():
            preds[name] = self._scaled(regress_pose(f, self.heads[name]))
        if fused is not None:
            preds[FUSION_HEAD] = self._scaled(regress_pose(fused.features, self.heads[FUSION_HEAD]))
        return preds

    def _scaled(self, pred):
        t, r = pred
        return self.t_offset + self.t_scale * t, r

    def loss(self, batch: list[Sample], preds=None) -> tc.Tensor:
        preds = preds or self.forward(batch)
        t_target = np.stack([s.t for s in batch])
        r_target = np.stack([s.r for s in batch])
        return hyploc_loss(list(preds.values()), t_target, r_target, self.loss_params)

    def predict(self, batch: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
        """Final-head translation ``(B, 3)`` and log-quaternion ``(B, 3)``."""
        with tc.no_grad():
            t, r = self.forward(batch)[self.final_head]
        return t.data.copy(), r.data.copy()
