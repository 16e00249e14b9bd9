"""Per-image saliency metrics: MAE, F-measure, E-measure and S-measure.

Inputs are 2-D float arrays; predictions in [0, 1], ground truth binary.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

_EPS = np.spacing(1.0)
LEVELS = 256


def _check(s: np.ndarray, g: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if s.shape != g.shape:
        raise ShapeError(f"{name}: prediction {s.shape} vs ground truth {g.shape}")
    return s, g


def mae(s, g) -> float:
    s, g = _check(s, g, "mae")
    # fsum is correctly rounded, so the result does not depend on pixel order
    return math.fsum(np.abs(s - g).ravel()) / s.size


def quantize(s: np.ndarray) -> np.ndarray:
    """Largest 8-bit level t with s * 255 >= t, so level >= t iff the pixel passes threshold t.

    The 1e-9 slack keeps maps loaded from 8-bit files on their exact level.
    """
    return np.floor(np.clip(s, 0.0, 1.0) * 255.0 + 1e-9).astype(np.int64)


def adaptive_threshold(s: np.ndarray) -> float:
    return min(2.0 * float(np.mean(s)), 1.0)


def adaptive_level(s: np.ndarray) -> int:
    """Smallest 8-bit level at or above the adaptive threshold."""
    return int(np.ceil(adaptive_threshold(s) * 255.0 - 1e-9))


def _fbeta(tp, fp, fn, beta2: float):
    tp, fp, fn = (np.asarray(v, dtype=np.float64) for v in (tp, fp, fn))
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        denom = beta2 * precision + recall
        f = np.where(denom > 0, (1.0 + beta2) * precision * recall / denom, 0.0)
    return f


@dataclass
class FMeasure:
    curve: np.ndarray
    max: float
    adaptive: float
    empty_gt: bool = False


def f_measure(s, g, beta2: float = 0.3) -> FMeasure:
    """F-beta at every 8-bit threshold t (positive iff level >= t), plus max and adaptive.

    The adaptive variant binarises at 2 * mean(s), clamped to 1, rounded up
    to the 8-bit grid so that it always lies on the curve.
    """
    s, g = _check(s, g, "f_measure")
    fg = g > 0.5
    if not fg.any():
        warnings.warn("f_measure: ground truth has no foreground; returning zeros", RuntimeWarning, stacklevel=2)
        return FMeasure(np.zeros(LEVELS), 0.0, 0.0, empty_gt=True)
    levels = quantize(s)
    fg_hist = np.bincount(levels[fg], minlength=LEVELS)
    bg_hist = np.bincount(levels[~fg], minlength=LEVELS)
    # counts of pixels with level >= t, for t = 0..255
    tp = np.cumsum(fg_hist[::-1])[::-1]
    fp = np.cumsum(bg_hist[::-1])[::-1]
    fn = fg.sum() - tp
    curve = _fbeta(tp, fp, fn, beta2)
    adaptive = float(curve[adaptive_level(s)])
    return FMeasure(curve, float(curve.max()), adaptive)


def e_measure(s, g) -> float:
    """Enhanced-alignment measure with an adaptive (2 * mean) binarisation of s."""
    s, g = _check(s, g, "e_measure")
    fg = g > 0.5
    pred = (s >= adaptive_threshold(s)).astype(np.float64)
    gt = fg.astype(np.float64)
    if not fg.any():
        enhanced = 1.0 - pred
    elif fg.all():
        enhanced = pred
    else:
        align_pred = pred - pred.mean()
        align_gt = gt - gt.mean()
        align = 2.0 * align_pred * align_gt / (align_pred**2 + align_gt**2 + _EPS)
        enhanced = (align + 1.0) ** 2 / 4.0
    return float(np.mean(enhanced))


def _object_score(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    mu = x.mean()
    sigma = x.std(ddof=1) if x.size > 1 else 0.0
    return 2.0 * mu / (mu * mu + 1.0 + sigma + _EPS)


def _object_term(s: np.ndarray, fg: np.ndarray) -> float:
    u = fg.mean()
    fg_score = _object_score(s[fg])
    bg_score = _object_score(1.0 - s[~fg])
    return u * fg_score + (1.0 - u) * bg_score


def _centroid(fg: np.ndarray) -> tuple[int, int]:
    """Split point (row, col) counted in pixels from the top-left corner."""
    h, w = fg.shape
    if not fg.any():
        return int(np.round(h / 2)), int(np.round(w / 2))
    rows, cols = np.nonzero(fg)
    return int(np.round(rows.mean())) + 1, int(np.round(cols.mean())) + 1


def _ssim(s: np.ndarray, g: np.ndarray) -> float:
    n = s.size
    if n == 0:
        return 0.0
    x, y = s.mean(), g.mean()
    dof = max(n - 1, 1)
    sx = np.sum((s - x) ** 2) / dof
    sy = np.sum((g - y) ** 2) / dof
    sxy = np.sum((s - x) * (g - y)) / dof
    alpha = 4.0 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + _EPS)
    if beta == 0:
        return 1.0
    return 0.0


def _region_term(s: np.ndarray, g: np.ndarray) -> float:
    h, w = g.shape
    cy, cx = _centroid(g > 0.5)
    total = 0.0
    for rs, cs in (
        (slice(0, cy), slice(0, cx)),
        (slice(0, cy), slice(cx, w)),
        (slice(cy, h), slice(0, cx)),
        (slice(cy, h), slice(cx, w)),
    ):
        ps, pg = s[rs, cs], g[rs, cs]
        total += ps.size / (h * w) * _ssim(ps, pg)
    return total


def s_measure(s, g, alpha: float = 0.5) -> float:
    """Structure measure: alpha * object-aware + (1 - alpha) * region-aware similarity."""
    s, g = _check(s, g, "s_measure")
    gt = (g > 0.5).astype(np.float64)
    y = gt.mean()
    if y == 0:
        score = 1.0 - s.mean()
    elif y == 1:
        score = s.mean()
    else:
        score = alpha * _object_term(s, gt > 0.5) + (1.0 - alpha) * _region_term(s, gt)
    return float(np.clip(score, 0.0, 1.0))


@dataclass
class MetricReport:
    mae: float
    fbeta_curve: np.ndarray
    fbeta_max: float
    fbeta_adaptive: float
    emeasure: float
    smeasure: float
    warnings: list[str] = field(default_factory=list)

    def row(self) -> dict[str, float]:
        return {
            "mae": self.mae,
            "fbeta_max": self.fbeta_max,
            "fbeta_adaptive": self.fbeta_adaptive,
            "emeasure": self.emeasure,
            "smeasure": self.smeasure,
        }


def evaluate(s, g, beta2: float = 0.3, alpha: float = 0.5) -> MetricReport:
    s, g = _check(s, g, "evaluate")
    notes = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fm = f_measure(s, g, beta2)
    notes.extend(str(w.message) for w in caught)
    return MetricReport(
        mae=mae(s, g),
        fbeta_curve=fm.curve,
        fbeta_max=fm.max,
        fbeta_adaptive=fm.adaptive,
        emeasure=e_measure(s, g),
        smeasure=s_measure(s, g, alpha),
        warnings=notes,
    )
