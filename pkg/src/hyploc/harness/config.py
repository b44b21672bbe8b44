"""Run configuration: a flat dataclass read from ``key=value`` files."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

MODALITIES = ("3D", "sph", "bev")


LR_SCHEDULES = ("cosine", "constant")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # world and sensor
    scene_radius: float = 20.0
    num_boxes: int = 12
    scene_seed: int = 0
    beams: int = 16
    azimuth_samples: int = 180
    fov_min_deg: float = -25.0
    fov_max_deg: float = 15.0
    max_range: float = 30.0
    noise_sigma: float = 0.02
    n_train: int = 500
    n_test: int = 100
    jitter_radius: float = 0.5
    yaw_jitter_deg: float = 5.0
    workers: int = 1
    # projections
    sph_height: int = 32
    sph_width: int = 64
    bev_height: int = 64
    bev_width: int = 64
    # model
    modalities: str = "3D,sph"
    width: int = 64
    saga_layers: int = 2
    sa_centroids: int = 64
    sa_radius: float = 4.0
    sa_neighbors: int = 16
    ffb_blocks: int = 2
    heads: int = 8
    head_hidden: int = 64
    curvature: float = 1.0
    metric: str = "free"
    euclidean: bool = True
    hyperbolic: bool = True
    # optimisation
    lr: float = 1e-3
    lr_schedule: str = "cosine"
    weight_decay: float = 5e-4
    batch_size: int = 8
    epochs: int = 60
    seed: int = 0
    # io
    data_dir: str = "data"
    out_dir: str = "runs/default"

    def __post_init__(self):
        mods = self.modality_list
        if not mods or any(m not in MODALITIES for m in mods) or len(set(mods)) != len(mods):
            raise ConfigError(f"modalities must be a subset of {MODALITIES}, got {self.modalities!r}")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} is not divisible by {self.heads} heads")
        if self.saga_layers < 1 or self.ffb_blocks < 1:
            raise ConfigError("saga_layers and ffb_blocks must be >= 1")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        if self.metric not in ("off", "free", "symmetric", "pd", "riemannian"):
            raise ConfigError(f"unknown metric mode {self.metric!r}")
        if not (self.euclidean or self.hyperbolic):
            raise ConfigError("at least one of euclidean / hyperbolic must be enabled")

    @property
    def modality_list(self) -> list[str]:
        return [m.strip() for m in self.modalities.split(",") if m.strip()]

    @property
    def fused(self) -> bool:
        return len(self.modality_list) > 1

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        pairs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            pairs[key] = val
        return (base or cls()).with_overrides(pairs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def with_overrides(self, pairs: dict[str, str]) -> "RunConfig":
        types = {f.name: f.type for f in fields(self)}
        changes = {}
        for key, val in pairs.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = parse_value(types[key], val, key)
        return self.replace(**changes)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v).lower() if isinstance(v, bool) else str(v)


def parse_value(typ, text, key: str = "?"):
    if not isinstance(text, str):
        return text
    name = typ if isinstance(typ, str) else typ.__name__
    try:
        if name == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if name == "int":
            return int(text)
        if name == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r} is not a {name}") from None
    return text


# ablation presets: name -> overrides on top of the base config
PRESETS: dict[str, dict] = {
    "full": {},
    "3d": {"modalities": "3D"},
    "sph": {"modalities": "sph"},
    "bev": {"modalities": "bev"},
    "3d+sph": {"modalities": "3D,sph"},
    "3d+bev": {"modalities": "3D,bev"},
    "sph+bev": {"modalities": "sph,bev"},
    "all-3": {"modalities": "3D,sph,bev"},
    "no-hyperbolic": {"hyperbolic": False},
    "no-euclidean": {"euclidean": False},
    "no-metric": {"metric": "off"},
    "riemannian": {"metric": "riemannian"},
    "pd": {"metric": "pd"},
    "symmetric": {"metric": "symmetric"},
    "free": {"metric": "free"},
}

PRESET_GROUPS = {
    "modules": ["full", "no-hyperbolic", "no-euclidean"],
    "projections": ["3d", "sph", "bev", "3d+sph", "3d+bev", "sph+bev", "all-3"],
    "metrics": ["no-metric", "riemannian", "pd", "symmetric", "free"],
    "acceptance": ["full", "3d", "sph", "bev", "no-hyperbolic", "no-euclidean", "no-metric"],
}


def preset_config(base: RunConfig, name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return base.replace(**PRESETS[name])


def expand_presets(spec: str) -> list[str]:
    names = []
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        names.extend(PRESET_GROUPS.get(item, [item]))
    for n in names:
        if n not in PRESETS:
            raise ConfigError(f"unknown preset {n!r}")
    return names
