"""Feature fusion blocks over a graph of multi-modal tokens.

Each block merges per-modality features (plus one pooled node per modality)
into a single token set, runs metric-weighted attention in Euclidean space
and on the Poincare ball, blends the two with learnable scalars, then splits
the tokens back per modality for modality-specific refinement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensorcore as tc
from .encoder2d import ResBlock, res_block
from .encoder3d import GaConfig, GaLayer
from .hypmath import BallConfig, exp_map0, project_to_ball
from .nn import Linear, Module, param
from .tensorcore import Tensor

POINT_MODALITY = "3D"


def pool_tag(name: str) -> str:
    return "pool" + (name if name == POINT_MODALITY else name[:1].upper() + name[1:])


@dataclass
class TokenSet:
    features: Tensor                       # (B, n, C)
    tags: list[str]
    layout: dict[str, tuple[int, int]]     # modality or pool tag -> row range
    grids: dict[str, tuple[int, int]] = field(default_factory=dict)
    modalities: list[str] = field(default_factory=list)

    def rows(self, tag: str) -> Tensor:
        lo, hi = self.layout[tag]
        return self.features[:, lo:hi, :]

    def with_features(self, features: Tensor) -> "TokenSet":
        return TokenSet(features, self.tags, self.layout, self.grids, self.modalities)


def merge(modal_features: dict[str, Tensor], grids: dict[str, tuple[int, int]] | None = None) -> TokenSet:
    """Stack modality rows, then one mean-pooled row per modality, and l2-normalise every row.

    Inputs are ``(B, n_i, C)`` (or ``(n_i, C)``, promoted to a batch of one).
    """
    names = list(modal_features)
    feats = []
    for name in names:
        f = tc.as_tensor(modal_features[name])
        feats.append(f.reshape((1,) + f.shape) if f.ndim == 2 else f)
    widths = {f.shape[-1] for f in feats}
    if len(widths) != 1:
        raise ValueError(f"modalities disagree on feature width: {sorted(widths)}")
    pooled = [tc.mean_pool(f) for f in feats]
    tags: list[str] = []
    layout: dict[str, tuple[int, int]] = {}
    start = 0
    for name, f in zip(names, feats):
        n = f.shape[1]
        layout[name] = (start, start + n)
        tags += [name] * n
        start += n
    for name in names:
        layout[pool_tag(name)] = (start, start + 1)
        tags.append(pool_tag(name))
        start += 1
    stacked = tc.concat(feats + pooled, axis=1)
    return TokenSet(tc.l2_normalize_rows(stacked), tags, layout, dict(grids or {}), names)


class SpaceInteraction(Module):
    def __init__(self, rng: np.random.Generator, width: int, heads: int, metric: str = "free",
                 euclidean: bool = True, hyperbolic: bool = True):
        if not (euclidean or hyperbolic):
            raise ValueError("at least one of the Euclidean / hyperbolic branches is required")
        cfg = GaConfig(heads, width // heads, metric)
        self.euclid = GaLayer(rng, width, cfg) if euclidean else None
        self.hyper = GaLayer(rng, width, cfg) if hyperbolic else None
        self.w_e = param(1.0) if euclidean else None
        self.w_h = param(1.0) if hyperbolic else None
        self.last_ball_points: list[np.ndarray] = []


def space_interact(tokens: TokenSet, block: SpaceInteraction, ball: BallConfig) -> TokenSet:
    """Weighted sum of Euclidean-branch and hyperbolic-branch attention outputs."""
    x = tokens.features
    out = None
    block.last_ball_points = []
    if block.euclid is not None:
        out = block.w_e * block.euclid(x)
    if block.hyper is not None:
        embedded = exp_map0(x, ball)
        attended = project_to_ball(block.hyper(embedded), ball)
        block.last_ball_points = [embedded.data, attended.data]
        term = block.w_h * attended
        out = term if out is None else out + term
    return tokens.with_features(out)


class PointRefiner(Module):
    """MLP -> metric attention -> MLP for point-cloud tokens."""

    def __init__(self, rng: np.random.Generator, width: int, heads: int, metric: str = "free"):
        self.pre = Linear(rng, width, width)
        self.ga = GaLayer(rng, width, GaConfig(heads, width // heads, metric))
        self.post = Linear(rng, width, width)

    def __call__(self, x) -> Tensor:
        return self.post(self.ga(tc.relu(self.pre(x))))


class ModalInteraction(Module):
    def __init__(self, rng: np.random.Generator, width: int, heads: int, modalities: list[str],
                 metric: str = "free"):
        self.refiners = {}
        for name in modalities:
            if name == POINT_MODALITY:
                self.refiners[name] = PointRefiner(rng, width, heads, metric)
            else:
                self.refiners[name] = ResBlock(rng, width)


def modal_interact(tokens: TokenSet, block: ModalInteraction) -> dict[str, Tensor]:
    """Split the token set back per modality (pooled rows dropped) and refine each."""
    out = {}
    for name in tokens.modalities:
        rows = tokens.rows(name)
        refiner = block.refiners[name]
        if isinstance(refiner, ResBlock):
            if name not in tokens.grids:
                raise ValueError(f"no grid layout recorded for modality {name!r}")
            out[name] = res_block(rows, tokens.grids[name], refiner)
        else:
            out[name] = refiner(rows)
    return out


class FusionStack(Module):
    """``L`` fusion blocks followed by one last merge + space interaction."""

    def __init__(self, rng: np.random.Generator, width: int, heads: int, modalities: list[str],
                 num_blocks: int = 2, metric: str = "free", euclidean: bool = True,
                 hyperbolic: bool = True, ball: BallConfig = BallConfig()):
        if num_blocks < 1:
            raise ValueError("need at least one fusion block")
        self.ball = ball
        self.space = [SpaceInteraction(rng, width, heads, metric, euclidean, hyperbolic)
                      for _ in range(num_blocks + 1)]
        self.modal = [ModalInteraction(rng, width, heads, modalities, metric) for _ in range(num_blocks)]

    def __call__(self, modal_features: dict[str, Tensor], grids: dict[str, tuple[int, int]]) -> TokenSet:
        return ffb_stack(modal_features, grids, self)


def ffb_stack(modal_features: dict[str, Tensor], grids: dict[str, tuple[int, int]],
              stack: FusionStack) -> TokenSet:
    feats = modal_features
    for space, modal in zip(stack.space[:-1], stack.modal):
        tokens = space_interact(merge(feats, grids), space, stack.ball)
        feats = modal_interact(tokens, modal)
    return space_interact(merge(feats, grids), stack.space[-1], stack.ball)
