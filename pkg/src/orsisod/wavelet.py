"""Single-level orthonormal 2-D Haar transform on (N, C, H, W) tensors.

For each 2x2 block [[a, b], [c, d]]::

    ll = (a + b + c + d) / 2      lh = (a + b - c - d) / 2
    hl = (a - b + c - d) / 2      hh = (a - b - c + d) / 2

The synthesis step is the transpose of this orthogonal map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, _result

# rows: ll, lh, hl, hh; columns: polyphase a, b, c, d
_SIGNS = np.array(
    [
        [1, 1, 1, 1],
        [1, 1, -1, -1],
        [1, -1, 1, -1],
        [1, -1, -1, 1],
    ],
    dtype=np.float64,
)
COMPONENTS = ("ll", "lh", "hl", "hh")


@dataclass
class WaveletQuad:
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def __post_init__(self):
        shapes = {t.shape for t in self}
        if len(shapes) != 1:
            raise ShapeError(f"wavelet components disagree in shape: {sorted(shapes)}")

    def __iter__(self):
        return iter((self.ll, self.lh, self.hl, self.hh))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.ll.shape

    def energy(self) -> float:
        return float(sum(np.sum(t.data**2) for t in self))


def _polyphase(x: np.ndarray) -> tuple[np.ndarray, ...]:
    return x[:, :, 0::2, 0::2], x[:, :, 0::2, 1::2], x[:, :, 1::2, 0::2], x[:, :, 1::2, 1::2]


def _haar_component(x: Tensor, row: int) -> Tensor:
    sa, sb, sc, sd = _SIGNS[row]
    a, b, c, d = _polyphase(x.data)
    out = 0.5 * (sa * a + sb * b + sc * c + sd * d)

    def backward(g):
        gx = np.empty_like(x.data)
        gx[:, :, 0::2, 0::2] = 0.5 * sa * g
        gx[:, :, 0::2, 1::2] = 0.5 * sb * g
        gx[:, :, 1::2, 0::2] = 0.5 * sc * g
        gx[:, :, 1::2, 1::2] = 0.5 * sd * g
        return (gx,)

    return _result(f"dwt2_{COMPONENTS[row]}", out, (x,), backward)


def dwt2(x: Tensor) -> WaveletQuad:
    if x.ndim != 4:
        raise ShapeError(f"dwt2 expects (N, C, H, W), got {x.shape}")
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise ValueError(f"dwt2 needs even height and width, got {h}x{w}")
    return WaveletQuad(*(_haar_component(x, r) for r in range(4)))


def idwt2(q: WaveletQuad) -> Tensor:
    parts = tuple(q)
    shapes = {t.shape for t in parts}
    if len(shapes) != 1:
        raise ShapeError(f"idwt2 components disagree in shape: {sorted(shapes)}")
    n, c, h, w = parts[0].shape
    coeffs = [t.data for t in parts]
    out = np.empty((n, c, 2 * h, 2 * w))
    # column k of _SIGNS gives the synthesis weights for polyphase k
    for k, (r0, r1) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        s = _SIGNS[:, k]
        out[:, :, r0::2, r1::2] = 0.5 * (s[0] * coeffs[0] + s[1] * coeffs[1] + s[2] * coeffs[2] + s[3] * coeffs[3])

    def backward(g):
        pa, pb, pc, pd = _polyphase(g)
        return tuple(0.5 * (s[0] * pa + s[1] * pb + s[2] * pc + s[3] * pd) for s in _SIGNS)

    return _result("idwt2", out, parts, backward)


def dwt2_array(x: np.ndarray) -> WaveletQuad:
    """Convenience wrapper for plain arrays of shape (H, W) or (N, C, H, W)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, None]
    return dwt2(Tensor(x))
