"""Cross-level attention in the Haar domain followed by attention refinement.

Both mid-level features are aligned to a common width and resolution and
split into four frequency components. Each component of one level attends
to the same component of the other level only, at a quarter of the token
count of the full-resolution map. The interacted components are recombined
with the inverse transform, concatenated with the aligned input, gated by
channel and spatial attention, and fused.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .layers import ChannelAttention, Conv2d, spatial_attention
from .optim import ParamStore
from .tensor import Tensor
from .wavelet import COMPONENTS, WaveletQuad, dwt2, idwt2


def wavelet_interaction(
    a: Tensor,
    b: Tensor,
    attention: np.ndarray | None = None,
    trace: dict | None = None,
) -> Tensor:
    """Tokens of ``a`` attend to tokens of ``b``; the result is added to ``a``.

    With a of shape (N, C, h, w): queries are a as (N, hw, C), keys are b as
    (N, C, hw), M = softmax(queries @ keys) along its last axis, and the
    output is reshape((M @ queries)^T) + a.

    ``attention`` replaces M with a fixed (hw, hw) matrix; it exists for tests.
    """
    if a.shape != b.shape:
        raise ShapeError(f"wavelet_interaction: {a.shape} vs {b.shape}")
    n, c, h, w = a.shape
    queries = T.transpose(T.reshape(a, (n, c, h * w)))
    keys = T.reshape(b, (n, c, h * w))
    if attention is None:
        m = T.softmax(T.matmul(queries, keys))
    else:
        m = Tensor(np.broadcast_to(attention, (n, h * w, h * w)))
    if trace is not None:
        trace.setdefault("attention", []).append(m.data)
    mixed = T.reshape(T.transpose(T.matmul(m, queries)), (n, c, h, w))
    return mixed + a


class AttentionBlock:
    """Plain channel gating then plain spatial gating (no residual)."""

    def __init__(self, store: ParamStore, name: str, channels: int, ratio: int, rng: np.random.Generator):
        self.ca = ChannelAttention(store, f"{name}.ca", channels, ratio, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x * self.ca(x)
        return x * spatial_attention(x)


class FCE:
    def __init__(
        self,
        store: ParamStore,
        c2: int,
        c3: int,
        channels: int,
        rng: np.random.Generator,
        reduction_ratio: int = 4,
        name: str = "fce",
    ):
        self.channels = channels
        self.align2 = Conv2d(store, f"{name}.align2", c2, channels, 1, rng)
        self.align3 = Conv2d(store, f"{name}.align3", c3, channels, 1, rng)
        self.at2 = AttentionBlock(store, f"{name}.at2", 2 * channels, reduction_ratio, rng)
        self.at3 = AttentionBlock(store, f"{name}.at3", 2 * channels, reduction_ratio, rng)
        self.fuse = Conv2d(store, f"{name}.fuse", 4 * channels, channels, 3, rng)

    def align(self, f2: Tensor, f3: Tensor) -> tuple[Tensor, Tensor]:
        h2, w2 = f2.shape[2:]
        h3, w3 = f3.shape[2:]
        if h2 != 2 * h3 or w2 != 2 * w3:
            raise ValueError(f"fce needs F2 at twice the resolution of F3, got {f2.shape} and {f3.shape}")
        if h2 % 2 or w2 % 2:
            raise ValueError(f"fce needs even F2 size, got {h2}x{w2}")
        return self.align2(f2), T.upsample_nearest(self.align3(f3), 2)

    def interact(self, q2: WaveletQuad, q3: WaveletQuad, trace: dict | None = None) -> tuple[WaveletQuad, WaveletQuad]:
        """Per-component cross attention in both directions."""
        out2, out3 = [], []
        for comp in COMPONENTS:
            a, b = getattr(q2, comp), getattr(q3, comp)
            sub = {} if trace is not None else None
            out2.append(wavelet_interaction(a, b, trace=sub))
            out3.append(wavelet_interaction(b, a, trace=sub))
            if trace is not None:
                trace.setdefault("attention", {})[comp] = sub["attention"]
        return WaveletQuad(*out2), WaveletQuad(*out3)

    def __call__(self, f2: Tensor, f3: Tensor, trace: dict | None = None) -> Tensor:
        a2, a3 = self.align(f2, f3)
        q2, q3 = dwt2(a2), dwt2(a3)
        w2, w3 = self.interact(q2, q3, trace)
        i2, i3 = idwt2(w2), idwt2(w3)
        if trace is not None:
            trace.update(aligned=(a2, a3), quads=(q2, q3), interacted=(w2, w3), inverse=(i2, i3))
        en2 = self.at2(T.concat_channels([i2, a2]))
        en3 = self.at3(T.concat_channels([i3, a3]))
        return self.fuse(T.concat_channels([en2, en3]))
