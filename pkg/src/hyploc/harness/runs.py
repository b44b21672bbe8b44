"""End-to-end run helpers shared by the CLI and the acceptance suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import plots
from .checkpoint import save_checkpoint
from .config import RunConfig, preset_config
from .data import ensure_data, load_samples, train_translations
from .evaluate import EvalReport, evaluate, format_table
from .train import TrainResult, train

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.hllc"


@dataclass
class RunOutput:
    cfg: RunConfig
    result: TrainResult
    report: EvalReport
    checkpoint: Path


def write_loss_curve(path, losses) -> None:
    lines = ["epoch\tmean_loss"] + [f"{i}\t{v:.17g}" for i, v in enumerate(losses, 1)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def train_and_evaluate(cfg: RunConfig, figures: bool = True, samples_cache: dict | None = None) -> RunOutput:
    train_manifest, test_manifest = ensure_data(cfg)
    key = cfg.modalities
    if samples_cache is not None and key in samples_cache:
        train_samples, test_samples = samples_cache[key]
    else:
        train_samples = load_samples(train_manifest, cfg)
        test_samples = load_samples(test_manifest, cfg)
        if samples_cache is not None:
            samples_cache[key] = (train_samples, test_samples)
    result = train(cfg, train_samples)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / CHECKPOINT_NAME
    save_checkpoint(ckpt, result.model)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    write_loss_curve(out / "loss_curve.tsv", result.epoch_losses)
    rep = evaluate(result.model, test_samples)
    rep.write_tsv(out / "eval_report.tsv")
    if figures and result.epoch_losses:
        plots.plot_loss_curve(result.epoch_losses, out / "loss_curve.png")
    log.info("%s: %s", cfg.out_dir, rep.summary())
    return RunOutput(cfg, result, rep, ckpt)


def ablate(base: RunConfig, presets: list[str], out_dir=None, figures: bool = True) -> list[tuple[str, EvalReport]]:
    """Train and evaluate each preset with the base seed; returns (preset, report) rows."""
    out_root = Path(out_dir or base.out_dir)
    rows = []
    cache: dict = {}
    for name in presets:
        cfg = preset_config(base, name).replace(out_dir=str(out_root / name))
        run = train_and_evaluate(cfg, figures=figures, samples_cache=cache)
        rows.append((name, run.report))
    table = format_table(rows)
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "ablation.txt").write_text(table + "\n", encoding="utf-8")
    if figures:
        plots.plot_ablation(rows, out_root / "ablation.png")
    return rows


def reference_translations(cfg: RunConfig) -> np.ndarray:
    return train_translations(cfg)
