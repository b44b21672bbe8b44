"""Command-line entry point: ``hyploc {gen-data,train,eval,ablate,export-traj}``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path

from . import plots
from .checkpoint import load_checkpoint
from .config import RunConfig, expand_presets
from .data import ensure_data, generate_data, load_samples, manifest_paths, train_translations
from .evaluate import evaluate, export_trajectory, format_table, predict
from .runs import CHECKPOINT_NAME, ablate, train_and_evaluate

log = logging.getLogger("hyploc")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file; flags override it")
    group = parser.add_argument_group("run configuration")
    for f in fields(RunConfig):
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", metavar=str(f.type).upper(),
                           help=f"(default: {getattr(RunConfig(), f.name)})")


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {f.name: getattr(args, f"cfg_{f.name}") for f in fields(RunConfig)
                 if getattr(args, f"cfg_{f.name}", None) is not None}
    return cfg.with_overrides(overrides)


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    train, test = generate_data(cfg)
    print(f"train_manifest\t{train}\ntest_manifest\t{test}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    run = train_and_evaluate(cfg, figures=not args.no_figures)
    print(f"checkpoint\t{run.checkpoint}")
    print(f"train_seconds\t{run.result.seconds:.1f}")
    print(run.report.summary())
    return 0


def _checkpoint_and_manifest(args):
    model = load_checkpoint(args.checkpoint)
    cfg = model.cfg
    if args.data_dir:
        cfg = cfg.replace(data_dir=args.data_dir)
        model.cfg = cfg
    manifest = args.manifest or manifest_paths(cfg)[1]
    return model, cfg, manifest


def cmd_eval(args) -> int:
    model, cfg, manifest = _checkpoint_and_manifest(args)
    samples = load_samples(manifest, cfg)
    thr = None if args.threshold is None else float(args.threshold)
    reference = train_translations(cfg) if thr is not None and not math.isinf(thr) else None
    rep = evaluate(model, samples, reference, thr)
    if args.report:
        rep.write_tsv(args.report)
    print(rep.summary())
    return 0


def cmd_export_traj(args) -> int:
    model, cfg, manifest = _checkpoint_and_manifest(args)
    preds = predict(model, load_samples(manifest, cfg))
    out = export_trajectory(preds, args.out)
    if not args.no_figures:
        reference = train_translations(cfg) if manifest_paths(cfg)[0].exists() else None
        plots.plot_trajectory(preds.t_true, preds.t_pred, Path(out).with_suffix(".png"), reference)
    print(f"trajectory_csv\t{out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    ensure_data(cfg)
    rows = ablate(cfg, expand_presets(args.presets), figures=not args.no_figures)
    print(format_table(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyploc", description="LiDAR pose regression on synthetic scans")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render the synthetic train/test scans")
    _add_config_flags(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train, checkpoint and evaluate on the test split")
    _add_config_flags(p)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")
    p.add_argument("--data-dir")
    p.add_argument("--threshold", help="outlier distance in meters (inf = no filtering)")
    p.add_argument("--report", help="write the per-scan report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare presets")
    _add_config_flags(p)
    p.add_argument("--presets", default="acceptance",
                   help="comma list of presets or groups (modules, projections, metrics, acceptance)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-traj", help="write predicted vs true trajectory as CSV (+ PNG)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")
    p.add_argument("--data-dir")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_export_traj)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # one machine-parseable line, nonzero exit
        msg = str(exc).replace("\n", " ")
        print(f"error\t{type(exc).__name__}\t{msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
