"""Parameter storage, initialisation and the RMSprop update."""

from __future__ import annotations

from collections.abc import Iterator

import numpy as np

from .errors import ConfigError, StateError
from .tensor import Tensor


class ParamStore:
    """Named trainable tensors plus per-parameter RMSprop state."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.square_avg: dict[str, np.ndarray] = {}
        self.momentum_buf: dict[str, np.ndarray] = {}
        self.steps = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def clear_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def num_values(self) -> int:
        return sum(t.size for t in self.params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}


RELU_GAIN = 6.0


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, gain: float = 1.0) -> np.ndarray:
    """U(-sqrt(gain/fan_in), +sqrt(gain/fan_in)); gain 6 keeps ReLU activations at unit scale."""
    bound = np.sqrt(gain / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def rmsprop_step(
    store: ParamStore,
    lr: float = 1e-5,
    momentum: float = 0.9,
    decay: float = 0.99,
    eps: float = 1e-8,
) -> None:
    """One RMSprop update with a momentum buffer, applied in place.

    square_avg <- decay * square_avg + (1 - decay) * g^2
    buf        <- momentum * buf + g / (sqrt(square_avg) + eps)
    p          <- p - lr * buf
    """
    missing = [k for k, t in store if t.grad is None]
    if missing:
        raise StateError(f"no gradient for parameters: {', '.join(missing[:5])}")
    for name, t in store:
        g = t.grad
        sq = store.square_avg.get(name)
        if sq is None:
            sq = np.zeros_like(t.data)
        sq = decay * sq + (1.0 - decay) * g * g
        step = g / (np.sqrt(sq) + eps)
        buf = store.momentum_buf.get(name)
        buf = step if buf is None else momentum * buf + step
        store.square_avg[name] = sq
        store.momentum_buf[name] = buf
        if lr:
            t.data = t.data - lr * buf
    store.steps += 1
