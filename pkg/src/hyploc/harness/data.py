"""Dataset generation and loading for runs."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..synthlidar import (RouteShape, Scene, SensorModel, SplitSpec, make_dataset, make_route,
                          read_manifest, read_scan)
from .config import RunConfig
from .model import Sample, prepare_sample

log = logging.getLogger(__name__)

WORLD_KEYS = ("scene_radius", "num_boxes", "scene_seed", "beams", "azimuth_samples", "fov_min_deg",
              "fov_max_deg", "max_range", "noise_sigma", "n_train", "n_test", "jitter_radius",
              "yaw_jitter_deg")


def build_world(cfg: RunConfig):
    shape = RouteShape.for_scene(cfg.scene_radius, cfg.scene_seed)
    scene = Scene.generate(cfg.scene_seed, cfg.scene_radius, cfg.num_boxes, route=shape)
    sensor = SensorModel(cfg.beams, np.radians(cfg.fov_min_deg), np.radians(cfg.fov_max_deg),
                         cfg.azimuth_samples, cfg.max_range, cfg.noise_sigma, cfg.scene_seed)
    route = make_route(scene, 200)
    split = SplitSpec(cfg.n_train, cfg.n_test, cfg.jitter_radius, np.radians(cfg.yaw_jitter_deg),
                      train_seed=cfg.scene_seed * 2 + 1, test_seed=cfg.scene_seed * 2 + 2)
    return scene, sensor, route, split


def world_signature(cfg: RunConfig) -> str:
    return "".join(f"{k}={getattr(cfg, k)!r}\n" for k in WORLD_KEYS)


def manifest_paths(cfg: RunConfig) -> tuple[Path, Path]:
    root = Path(cfg.data_dir)
    return root / "train.tsv", root / "test.tsv"


def generate_data(cfg: RunConfig) -> tuple[Path, Path]:
    scene, sensor, route, split = build_world(cfg)
    root = Path(cfg.data_dir)
    train, test = make_dataset(scene, sensor, route, root, split, workers=cfg.workers)
    (root / "world.txt").write_text(world_signature(cfg), encoding="utf-8")
    return train, test


def ensure_data(cfg: RunConfig) -> tuple[Path, Path]:
    train, test = manifest_paths(cfg)
    sig = Path(cfg.data_dir) / "world.txt"
    if train.exists() and test.exists() and sig.exists() and sig.read_text(encoding="utf-8") == world_signature(cfg):
        return train, test
    log.info("generating synthetic dataset in %s", cfg.data_dir)
    return generate_data(cfg)


def load_samples(manifest, cfg: RunConfig) -> list[Sample]:
    records = read_manifest(manifest)
    if not records:
        raise ValueError(f"manifest {manifest} is empty")
    return [prepare_sample(read_scan(rec.path), cfg) for rec in records]


def train_translations(cfg: RunConfig) -> np.ndarray:
    train, _ = manifest_paths(cfg)
    return np.array([rec.pose.t for rec in read_manifest(train)])
