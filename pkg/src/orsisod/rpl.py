"""Localisation from the two deepest features and the region-proportion head.

The location branch gates F4 and F5 first by channel and then by spatial
attention, each in residual form ``x * gate + x``, and fuses them with a 3x3
convolution. The proportion head regresses the foreground fraction of each
sample from F5.
"""

from __future__ import annotations

import enum

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import ChannelAttention, Conv2d, Linear, spatial_attention
from .optim import ParamStore
from .tensor import Tensor


class ProportionBin(enum.Enum):
    SMALL = "small"
    MID = "mid"
    LARGE = "large"


DEFAULT_THRESHOLDS = (0.25, 0.50)


def check_thresholds(thresholds: tuple[float, float]) -> None:
    lo, hi = thresholds
    if not 0.0 <= lo < hi <= 1.0:
        raise ConfigError(f"bin thresholds must satisfy 0 <= lo < hi <= 1, got lo={lo}, hi={hi}")


def bin_proportion(p: float, thresholds: tuple[float, float] = DEFAULT_THRESHOLDS) -> ProportionBin:
    """Small below ``lo``, Large above ``hi``, Mid on the closed interval between."""
    check_thresholds(thresholds)
    lo, hi = thresholds
    if p < lo:
        return ProportionBin.SMALL
    if p > hi:
        return ProportionBin.LARGE
    return ProportionBin.MID


def bins_for_batch(proportions, thresholds: tuple[float, float] = DEFAULT_THRESHOLDS) -> list[ProportionBin]:
    values = np.asarray(proportions.data if isinstance(proportions, Tensor) else proportions).reshape(-1)
    return [bin_proportion(float(p), thresholds) for p in values]


def region_proportion_target(gt_mask) -> Tensor:
    """Foreground fraction of each (N, 1, H, W) mask as an (N, 1, 1, 1) constant."""
    data = gt_mask.data if isinstance(gt_mask, Tensor) else np.asarray(gt_mask, dtype=np.float64)
    return Tensor(data.mean(axis=(1, 2, 3), keepdims=True))


class RPL:
    """Fuses F4 and the x2-upsampled F5 into the location feature."""

    def __init__(
        self,
        store: ParamStore,
        channels: int,
        rng: np.random.Generator,
        reduction_ratio: int = 4,
        cross_gating: bool = False,
        name: str = "rpl",
    ):
        self.channels = channels
        self.cross_gating = cross_gating
        self.ca4 = ChannelAttention(store, f"{name}.ca4", channels, reduction_ratio, rng)
        self.ca5 = ChannelAttention(store, f"{name}.ca5", channels, reduction_ratio, rng)
        self.fuse = Conv2d(store, f"{name}.fuse", 2 * channels, channels, 3, rng)

    def __call__(self, f4: Tensor, f5: Tensor) -> Tensor:
        if f4.shape[1] != self.channels or f5.shape[1] != self.channels:
            raise ShapeError(f"rpl expects {self.channels} channels, got {f4.shape[1]} and {f5.shape[1]}")
        if f4.shape[2] != 2 * f5.shape[2] or f4.shape[3] != 2 * f5.shape[3]:
            raise ShapeError(f"rpl expects F5 at half the size of F4, got {f4.shape} and {f5.shape}")
        f5 = T.upsample_nearest(f5, 2)

        v4, v5 = self.ca4(f4), self.ca5(f5)
        if self.cross_gating:
            v4, v5 = v5, v4
        f4_ca = f4 * v4 + f4
        f5_ca = f5 * v5 + f5

        w4, w5 = spatial_attention(f4_ca), spatial_attention(f5_ca)
        if self.cross_gating:
            w4, w5 = w5, w4
        f4_sa = f4_ca * w4 + f4_ca
        f5_sa = f5_ca * w5 + f5_ca

        return self.fuse(T.concat_channels([f4_sa, f5_sa]))


class PGHead:
    """Global average pool, two fully connected layers, sigmoid -> (N, 1, 1, 1)."""

    def __init__(self, store: ParamStore, channels: int, rng: np.random.Generator, hidden: int = 16, name: str = "pg"):
        self.fc1 = Linear(store, f"{name}.fc1", channels, hidden, rng)
        self.fc2 = Linear(store, f"{name}.fc2", hidden, 1, rng)

    def __call__(self, f5: Tensor) -> Tensor:
        return T.sigmoid(self.fc2(T.relu(self.fc1(T.global_avg_pool(f5)))))
