"""Thin parameterised layers that register their weights in a ParamStore."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .optim import RELU_GAIN, ParamStore, uniform_init
from .tensor import Tensor


class Conv2d:
    def __init__(self, store: ParamStore, name: str, cin: int, cout: int, k: int, rng: np.random.Generator):
        if k % 2 == 0:
            raise ConfigError(f"{name}: kernel size must be odd, got {k}")
        fan_in = cin * k * k
        self.k = k
        self.weight = store.add(f"{name}.weight", uniform_init(rng, (cout, cin, k, k), fan_in, RELU_GAIN))
        self.bias = store.add(f"{name}.bias", uniform_init(rng, (cout,), fan_in))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias)


class Linear:
    def __init__(self, store: ParamStore, name: str, din: int, dout: int, rng: np.random.Generator):
        self.weight = store.add(f"{name}.weight", uniform_init(rng, (dout, din), din, RELU_GAIN))
        self.bias = store.add(f"{name}.bias", uniform_init(rng, (dout,), din))

    def __call__(self, x: Tensor) -> Tensor:
        return T.fully_connected(x, self.weight, self.bias)


class ChannelAttention:
    """Global average pool, 1x1 reduce, ReLU, 1x1 expand, sigmoid -> (N, C, 1, 1) gates."""

    def __init__(self, store: ParamStore, name: str, channels: int, ratio: int, rng: np.random.Generator):
        if ratio < 1 or channels % ratio:
            raise ConfigError(f"{name}: channels {channels} not divisible by reduction ratio {ratio}")
        hidden = channels // ratio
        self.reduce = Conv2d(store, f"{name}.reduce", channels, hidden, 1, rng)
        self.expand = Conv2d(store, f"{name}.expand", hidden, channels, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        pooled = T.global_avg_pool(x)
        return T.sigmoid(self.expand(T.relu(self.reduce(pooled))))


def spatial_attention(x: Tensor) -> Tensor:
    """Parameter-free gate map: sigmoid of the channel-wise max, shape (N, 1, H, W)."""
    return T.sigmoid(T.channel_max_pool(x))
