"""Affine maps and layer normalization shared by the encoder and decoders.

Every layer exposes ``named_params(prefix)`` so checkpoints can address
each weight array by a stable dotted path.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Affine:
    """y = x @ w + b over the trailing axis."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator,
                 zero_init: bool = False):
        w = np.zeros((fan_in, fan_out)) if zero_init else xavier_uniform(rng, fan_in, fan_out)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(fan_out), requires_grad=True)

    @property
    def fan_in(self) -> int:
        return self.w.shape[0]

    @property
    def fan_out(self) -> int:
        return self.w.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim < 2:
            raise ShapeError(f"affine input must have rank >= 2, got {x.shape}")
        if x.shape[-1] != self.fan_in:
            raise ShapeError(
                f"affine expects trailing extent {self.fan_in}, got {x.shape}")
        y = T.matmul(x, self.w)
        b = T.reshape(self.b, (1,) * (y.ndim - 1) + (self.fan_out,))
        return T.add(y, T.expand(b, y.shape))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class LayerNorm:
    """Normalize the trailing axis to zero mean / unit variance, then
    apply a learned per-channel gain and bias."""

    def __init__(self, dim: int):
        self.g = Tensor(np.ones(dim), requires_grad=True)
        self.b = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.g, self.b)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.g": self.g, f"{prefix}.b": self.b}
