"""Evaluation reports, outlier filtering, ablation tables and trajectory export."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..posehead import PoseSE3, logquat_to_quat, pose_metrics
from .model import HypLiLoc, Sample

CSV_HEADER = ["scan_id", "gt_x", "gt_y", "gt_z", "pred_x", "pred_y", "pred_z", "t_err_m", "r_err_deg"]
OUTLIER_THRESHOLDS = (math.inf, 25.0, 10.0, 7.0, 5.0, 3.0, 1.0)


@dataclass
class Predictions:
    scan_ids: np.ndarray
    t_pred: np.ndarray    # (n, 3)
    q_pred: np.ndarray    # (n, 4)
    t_true: np.ndarray
    q_true: np.ndarray

    def __len__(self) -> int:
        return len(self.scan_ids)

    def errors(self) -> tuple[np.ndarray, np.ndarray]:
        pairs = [pose_metrics(PoseSE3(tp, qp), PoseSE3(tt, qt))
                 for tp, qp, tt, qt in zip(self.t_pred, self.q_pred, self.t_true, self.q_true)]
        arr = np.array(pairs, dtype=np.float64).reshape(-1, 2)
        return arr[:, 0], arr[:, 1]


@dataclass
class EvalReport:
    scan_ids: list[int]
    t_errors: list[float]
    r_errors: list[float]
    kept: list[bool] = field(default_factory=list)
    threshold: float | None = None

    def __post_init__(self):
        if not self.kept:
            self.kept = [True] * len(self.scan_ids)

    def _kept(self, values) -> np.ndarray:
        return np.asarray(values, dtype=np.float64)[np.asarray(self.kept, dtype=bool)]

    @property
    def retained_fraction(self) -> float:
        return float(np.mean(self.kept)) if self.kept else 0.0

    @property
    def mean_t(self) -> float:
        k = self._kept(self.t_errors)
        return float(k.mean()) if k.size else math.nan

    @property
    def mean_r(self) -> float:
        k = self._kept(self.r_errors)
        return float(k.mean()) if k.size else math.nan

    @property
    def median_t(self) -> float:
        k = self._kept(self.t_errors)
        return float(np.median(k)) if k.size else math.nan

    @property
    def median_r(self) -> float:
        k = self._kept(self.r_errors)
        return float(np.median(k)) if k.size else math.nan

    def summary(self) -> str:
        thr = "none" if self.threshold is None or math.isinf(self.threshold) else f"{self.threshold:g} m"
        return (f"scans={len(self.scan_ids)} threshold={thr} "
                f"mean={self.mean_t:.4f} m / {self.mean_r:.4f} deg "
                f"median={self.median_t:.4f} m / {self.median_r:.4f} deg "
                f"retained={100 * self.retained_fraction:.1f}%")

    def write_tsv(self, path) -> None:
        lines = ["scan_id\tt_err_m\tr_err_deg\tkept"]
        for sid, te, re_, k in zip(self.scan_ids, self.t_errors, self.r_errors, self.kept):
            lines.append(f"{sid}\t{te:.17g}\t{re_:.17g}\t{int(k)}")
        lines.append(f"# {self.summary()}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def predict(model: HypLiLoc, samples: list[Sample], batch_size: int = 16) -> Predictions:
    if not samples:
        raise ValueError("cannot evaluate an empty manifest")
    t_out, q_out = [], []
    for lo in range(0, len(samples), batch_size):
        batch = samples[lo:lo + batch_size]
        t, r = model.predict(batch)
        t_out.append(t)
        q_out.append(logquat_to_quat(r))
    return Predictions(np.array([s.scan_id for s in samples]), np.concatenate(t_out), np.concatenate(q_out),
                       np.array([s.t for s in samples]), np.array([s.q for s in samples]))


def outlier_mask(t_pred: np.ndarray, reference: np.ndarray, threshold: float | None) -> np.ndarray:
    """True for predictions within ``threshold`` meters of some reference translation."""
    if threshold is None or math.isinf(threshold):
        return np.ones(len(t_pred), dtype=bool)
    d2 = np.sum((t_pred[:, None, :] - reference[None, :, :]) ** 2, axis=-1)
    return np.sqrt(d2.min(axis=1)) <= threshold


def report(preds: Predictions, reference: np.ndarray | None = None,
           threshold: float | None = None) -> EvalReport:
    if len(preds) == 0:
        raise ValueError("cannot evaluate an empty manifest")
    t_err, r_err = preds.errors()
    if threshold is not None and not math.isinf(threshold) and reference is None:
        raise ValueError("outlier filtering needs reference (training) poses")
    kept = outlier_mask(preds.t_pred, reference, threshold) if reference is not None else np.ones(len(preds), bool)
    return EvalReport([int(s) for s in preds.scan_ids], t_err.tolist(), r_err.tolist(),
                      kept.tolist(), threshold)


def evaluate(model: HypLiLoc, samples: list[Sample], reference: np.ndarray | None = None,
             threshold: float | None = None) -> EvalReport:
    return report(predict(model, samples), reference, threshold)


def inject_outliers(preds: Predictions, fraction: float = 0.1, distance: float = 50.0,
                    seed: int = 0) -> Predictions:
    """Displace a seeded ``fraction`` of predicted translations by ``distance`` meters in the plane."""
    rng = np.random.default_rng([seed, 4242])
    n = len(preds)
    k = int(round(fraction * n))
    idx = rng.choice(n, size=k, replace=False)
    ang = rng.uniform(0, 2 * np.pi, size=k)
    t = preds.t_pred.copy()
    t[idx, 0] += distance * np.cos(ang)
    t[idx, 1] += distance * np.sin(ang)
    return Predictions(preds.scan_ids, t, preds.q_pred, preds.t_true, preds.q_true)


def threshold_sweep(preds: Predictions, reference: np.ndarray,
                    thresholds=OUTLIER_THRESHOLDS) -> list[EvalReport]:
    return [report(preds, reference, thr) for thr in thresholds]


def format_sweep(reports: list[EvalReport]) -> str:
    rows = ["threshold_m\tmean_t_m\tmean_r_deg\tretained_pct"]
    for rep in reports:
        thr = "none" if rep.threshold is None or math.isinf(rep.threshold) else f"{rep.threshold:g}"
        rows.append(f"{thr}\t{rep.mean_t:.4f}\t{rep.mean_r:.4f}\t{100 * rep.retained_fraction:.1f}")
    return "\n".join(rows)


def format_table(rows: list[tuple[str, EvalReport]]) -> str:
    """Aligned text table: preset, mean translation / rotation error, medians."""
    header = ("preset", "mean_t_m", "mean_r_deg", "median_t_m", "median_r_deg")
    body = [(name, f"{r.mean_t:.4f}", f"{r.mean_r:.4f}", f"{r.median_t:.4f}", f"{r.median_r:.4f}")
            for name, r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
    fmt = lambda cells: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    return "\n".join([fmt(header)] + [fmt(b) for b in body])


def export_trajectory(preds: Predictions, out_path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    t_err, r_err = preds.errors()
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i in range(len(preds)):
            writer.writerow([int(preds.scan_ids[i]),
                             *("%.17g" % v for v in preds.t_true[i]),
                             *("%.17g" % v for v in preds.t_pred[i]),
                             "%.17g" % t_err[i], "%.17g" % r_err[i]])
    return out_path
