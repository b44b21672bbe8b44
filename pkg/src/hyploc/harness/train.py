"""Seeded minibatch training loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..tensorcore import AdamState, adam_step
from .config import RunConfig
from .model import HypLiLoc, Sample

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, epoch: int):
        super().__init__(f"loss became non-finite at step {step} (epoch {epoch})")
        self.step = step
        self.epoch = epoch


@dataclass
class TrainResult:
    model: HypLiLoc
    epoch_losses: list[float] = field(default_factory=list)
    seconds: float = 0.0


def build_model(cfg: RunConfig, train_samples: list[Sample]) -> HypLiLoc:
    model = HypLiLoc(cfg)
    model.set_translation_frame(np.array([s.t for s in train_samples]))
    return model


def learning_rate(cfg: RunConfig, step: int, total_steps: int) -> float:
    """Rate for 0-based ``step``: ``cfg.lr`` throughout, or cosine-annealed from it towards zero."""
    if cfg.lr_schedule == "constant" or total_steps <= 1:
        return cfg.lr
    return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * step / total_steps))


def train(cfg: RunConfig, train_samples: list[Sample], model: HypLiLoc | None = None,
          progress=None) -> TrainResult:
    """Train for ``cfg.epochs`` epochs; deterministic given ``cfg.seed``."""
    if not train_samples:
        raise ValueError("no training samples")
    model = model or build_model(cfg, train_samples)
    params = model.parameters()
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 31337])
    result = TrainResult(model)
    start = time.perf_counter()
    step = 0
    total_steps = cfg.epochs * math.ceil(len(train_samples) / cfg.batch_size)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_samples))
        total, count = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = [train_samples[i] for i in order[lo:lo + cfg.batch_size]]
            model.zero_grad()
            loss = model.loss(batch)
            value = loss.item()
            step += 1
            if not math.isfinite(value):
                raise TrainingDiverged(step, epoch)
            loss.backward()
            state.lr = learning_rate(cfg, step - 1, total_steps)
            adam_step(params, [p.grad for p in params], state)
            total += value * len(batch)
            count += len(batch)
        result.epoch_losses.append(total / count)
        log.info("epoch %d/%d loss %.5f", epoch, cfg.epochs, result.epoch_losses[-1])
        if progress is not None:
            progress(epoch, result.epoch_losses[-1])
    result.seconds = time.perf_counter() - start
    return result
