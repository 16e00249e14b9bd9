"""Saliency supervision (BCE, IoU, soft F-measure) and proportion MSE.

Every term is averaged over the batch, and the total is their unweighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor, as_tensor

BCE_EPS = 1e-7
DENOM_EPS = 1e-8


def _same_shape(s: Tensor, g: Tensor, name: str) -> None:
    if s.shape != g.shape:
        raise ShapeError(f"{name}: prediction {s.shape} vs target {g.shape}")


def bce_loss(s, g, eps: float = BCE_EPS) -> Tensor:
    s, g = as_tensor(s), as_tensor(g)
    _same_shape(s, g, "bce_loss")
    s = T.clip(s, eps, 1.0 - eps)
    per_pixel = g * T.log(s) + (1.0 - g) * T.log(1.0 - s)
    return -T.mean(per_pixel)


def iou_loss(s, g) -> Tensor:
    s, g = as_tensor(s), as_tensor(g)
    _same_shape(s, g, "iou_loss")
    sg = s * g
    inter = T.sum(sg, axis=(1, 2, 3))
    union = T.sum(s + g - sg, axis=(1, 2, 3))
    return T.mean(1.0 - inter / (union + DENOM_EPS))


def fm_loss(s, g, beta2: float = 0.3) -> Tensor:
    """1 - soft F-beta, with TP = sum(s*g), FP = sum(s*(1-g)), FN = sum((1-s)*g)."""
    if beta2 <= 0:
        raise ValueError(f"beta2 must be positive, got {beta2}")
    s, g = as_tensor(s), as_tensor(g)
    _same_shape(s, g, "fm_loss")
    tp = T.sum(s * g, axis=(1, 2, 3))
    fp = T.sum(s * (1.0 - g), axis=(1, 2, 3))
    fn = T.sum((1.0 - s) * g, axis=(1, 2, 3))
    denom = beta2 * (tp + fn) + (tp + fp) + DENOM_EPS
    return T.mean(1.0 - (1.0 + beta2) * tp / denom)


def mse_loss(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    _same_shape(pred, target, "mse_loss")
    diff = pred - target
    return T.mean(diff * diff)


@dataclass
class LossReport:
    bce: float
    iou: float
    fm: float
    mse: float
    total: float
    total_tensor: Tensor | None = None

    def as_row(self) -> tuple[float, float, float, float, float]:
        return self.bce, self.iou, self.fm, self.mse, self.total


def total_loss(s, g, pg_pred, pg_target, beta2: float = 0.3, eps: float = BCE_EPS) -> LossReport:
    parts = (bce_loss(s, g, eps), iou_loss(s, g), fm_loss(s, g, beta2), mse_loss(pg_pred, pg_target))
    total = parts[0] + parts[1] + parts[2] + parts[3]
    return LossReport(*(p.item() for p in parts), total=total.item(), total_tensor=total)
