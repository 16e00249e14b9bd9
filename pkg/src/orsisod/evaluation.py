"""Directory-level evaluation of saliency maps against ground-truth masks."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import read_gray
from .metrics import LEVELS, MetricReport, evaluate

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
COLUMNS = ("name", "mae", "fbeta_max", "fbeta_adaptive", "emeasure", "smeasure")


@dataclass
class EvalResult:
    rows: list[tuple[str, MetricReport]]
    mean: dict[str, float]
    mean_curve: np.ndarray
    missing: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def _listing(directory: Path) -> dict[str, Path]:
    if not directory.is_dir():
        raise OSError(f"not a directory: {directory}")
    return {p.name: p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES}


def resize_nearest(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = img.shape
    rows = (np.arange(shape[0]) * h) // shape[0]
    cols = (np.arange(shape[1]) * w) // shape[1]
    return img[rows][:, cols]


def _evaluate_pair(pred_path: Path, gt_path: Path, beta2: float) -> tuple[MetricReport, list[str]]:
    notes = []
    gt = (read_gray(gt_path) > 127).astype(np.float64)
    pred = read_gray(pred_path)
    if pred.shape != gt.shape:
        notes.append(f"{pred_path.name}: prediction {pred.shape} resized to {gt.shape}")
        pred = resize_nearest(pred, gt.shape)
    report = evaluate(pred.astype(np.float64) / 255.0, gt, beta2)
    notes.extend(f"{pred_path.name}: {w}" for w in report.warnings)
    return report, notes


def evaluate_dirs(pred_dir, gt_dir, beta2: float = 0.3, workers: int | None = None) -> EvalResult:
    preds = _listing(Path(pred_dir))
    gts = _listing(Path(gt_dir))
    names = sorted(set(preds) & set(gts))
    missing = sorted(set(preds) ^ set(gts))
    workers = workers or min(8, os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda n: _evaluate_pair(preds[n], gts[n], beta2), names))

    rows = [(n, r) for n, (r, _) in zip(names, results)]
    notes = [w for _, ws in results for w in ws]
    if rows:
        mean = {k: float(np.mean([r.row()[k] for _, r in rows])) for k in COLUMNS[1:]}
        curve = np.mean([r.fbeta_curve for _, r in rows], axis=0)
    else:
        mean = {k: float("nan") for k in COLUMNS[1:]}
        curve = np.zeros(LEVELS)
    return EvalResult(rows, mean, curve, missing, notes)


def write_report(result: EvalResult, out_csv) -> Path:
    """Per-image rows plus a final ``mean`` row; also writes the mean F-beta curve."""
    out_csv = Path(out_csv)
    if out_csv.parent and not out_csv.parent.exists():
        try:
            out_csv.parent.mkdir(parents=True)
        except OSError as exc:
            raise OSError(f"cannot create {out_csv.parent}: {exc.strerror}") from exc
    try:
        with open(out_csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for name, report in result.rows:
                row = report.row()
                w.writerow((name, *(f"{row[k]:.10f}" for k in COLUMNS[1:])))
            w.writerow(("mean", *(f"{result.mean[k]:.10f}" for k in COLUMNS[1:])))
        curve_path = out_csv.with_name(out_csv.stem + "_fbeta_curve.csv")
        with open(curve_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("threshold", "fbeta"))
            w.writerows((t, f"{v:.10f}") for t, v in enumerate(result.mean_curve))
    except OSError as exc:
        raise OSError(f"cannot write report {out_csv}: {exc.strerror}") from exc
    return out_csv
