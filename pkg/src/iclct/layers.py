"""Small parameterized building blocks shared by the encoder, ICL stack and decoder."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear:
    """Affine map on the last axis: ``x @ w + b``."""

    def __init__(self, rng: np.random.Generator, fan_in: int, fan_out: int,
                 zero_init: bool = False):
        if zero_init:
            w = np.zeros((fan_in, fan_out))
        else:
            w = glorot_uniform(rng, fan_in, fan_out)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(fan_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)

    def named_params(self, prefix: str) -> dict:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class MLP:
    """Stack of Linear layers with GELU between them (linear output)."""

    def __init__(self, rng: np.random.Generator, dims: list[int], zero_init_last: bool = False):
        self.layers = []
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            zero = zero_init_last and i == len(dims) - 2
            self.layers.append(Linear(rng, d_in, d_out, zero_init=zero))

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.gelu(x)
        return x

    def named_params(self, prefix: str) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named_params(f"{prefix}.{i}"))
        return out


class LayerNorm:
    """Learnable layer normalization over the last axis."""

    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)

    def named_params(self, prefix: str) -> dict:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


class GatedLayerNorm(LayerNorm):
    """Layer norm blended with the identity: ``x + s * (LN(x) - x)``.

    The blend scalar ``s`` starts at 0, so a freshly initialized block is an
    exact identity map; training moves ``s`` toward 1, where the block is a
    plain layer norm. Used by the in-context layers so that inserting them
    into a converged model does not perturb its predictions.
    """

    def __init__(self, dim: int, eps: float = 1e-5, strength: float = 0.0):
        super().__init__(dim, eps)
        self.strength = Tensor(np.asarray(strength, dtype=np.float64), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        normed = ad.layer_norm(x, self.gamma, self.beta, self.eps)
        return ad.add(x, ad.mul(self.strength, ad.sub(normed, x)))

    def named_params(self, prefix: str) -> dict:
        out = super().named_params(prefix)
        out[f"{prefix}.strength"] = self.strength
        return out
