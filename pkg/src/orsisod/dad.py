"""Proportion-gated multi-kernel detail extraction on the shallowest feature.

Each sample is routed by its proportion bin to a kernel set. The lower
branch sums the selected CxC convolutions; the upper branch sums the
selected 1->1 convolutions of the channel-max map, applies a 1x1 head and a
sigmoid. The output is ``detail * gate + detail``.

All five kernel sizes are always allocated, so a checkpoint does not depend
on which bins were seen.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .layers import Conv2d
from .optim import ParamStore
from .rpl import ProportionBin
from .tensor import Tensor

KERNEL_SIZES = (1, 3, 5, 7, 9)

_KERNEL_SETS = {
    ProportionBin.SMALL: (1, 3, 5),
    ProportionBin.MID: (1, 3, 5, 7),
    ProportionBin.LARGE: (1, 3, 5, 7, 9),
}


def select_kernels(bin_: ProportionBin) -> tuple[int, ...]:
    return _KERNEL_SETS[bin_]


class DAD:
    def __init__(self, store: ParamStore, channels: int, rng: np.random.Generator, name: str = "dad"):
        self.channels = channels
        self.extractors = {k: Conv2d(store, f"{name}.extract{k}", channels, channels, k, rng) for k in KERNEL_SIZES}
        self.optimizers = {k: Conv2d(store, f"{name}.optimize{k}", 1, 1, k, rng) for k in KERNEL_SIZES}
        self.head = Conv2d(store, f"{name}.head", 1, 1, 1, rng)

    def _branch(self, x: Tensor, kernels: tuple[int, ...]) -> Tensor:
        detail = self.extractors[kernels[0]](x)
        for k in kernels[1:]:
            detail = detail + self.extractors[k](x)

        pooled = T.channel_max_pool(x)
        gate = self.optimizers[kernels[0]](pooled)
        for k in kernels[1:]:
            gate = gate + self.optimizers[k](pooled)
        gate = T.sigmoid(self.head(gate))
        return detail * gate + detail

    def __call__(self, f1: Tensor, bins: list[ProportionBin]) -> Tensor:
        if len(bins) != f1.shape[0]:
            raise ValueError(f"dad: got {len(bins)} bins for a batch of {f1.shape[0]}")
        if f1.shape[1] != self.channels:
            raise ShapeError(f"dad expects {self.channels} channels, got {f1.shape[1]}")

        groups: dict[ProportionBin, list[int]] = {}
        for i, b in enumerate(bins):
            groups.setdefault(b, []).append(i)
        if len(groups) == 1:
            (b,) = groups
            return self._branch(f1, select_kernels(b))

        outputs, order = [], []
        for b in ProportionBin:
            idx = groups.get(b)
            if not idx:
                continue
            outputs.append(self._branch(T.take(f1, idx), select_kernels(b)))
            order.extend(idx)
        stacked = T.concat(outputs, axis=0)
        return T.take(stacked, np.argsort(order))
