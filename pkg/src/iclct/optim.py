"""Decoupled-weight-decay Adam (AdamW) on raw parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ContractError


@dataclass
class AdamWState:
    """Per-parameter optimizer state and hyper-parameters.

    ``weight_decay`` is decoupled: the shrinkage ``lr * wd * param`` is
    applied directly to the parameter, independent of the gradient moments.
    """

    m: np.ndarray
    s: np.ndarray
    t: int = 0
    lr: float = 1e-3
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: Tensor, lr: float = 1e-3, weight_decay: float = 1e-2,
                  beta1: float = 0.9, beta2: float = 0.95, eps: float = 1e-8) -> "AdamWState":
        return cls(
            m=np.zeros_like(param.data),
            s=np.zeros_like(param.data),
            lr=lr,
            weight_decay=weight_decay,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adamw_step(param: Tensor, state: AdamWState) -> None:
    """One in-place AdamW update; requires a populated gradient."""
    g = param.grad
    if g is None:
        raise ContractError("adamw_step called on a parameter without a gradient")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.s = state.beta2 * state.s + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    s_hat = state.s / (1.0 - state.beta2 ** state.t)
    param.data -= state.lr * state.weight_decay * param.data
    param.data -= state.lr * m_hat / (np.sqrt(s_hat) + state.eps)


@dataclass
class AdamW:
    """Convenience wrapper driving one state per named parameter.

    ``no_decay`` parameters (biases, norm affines, scalar gates, tokens)
    get weight_decay 0; matrices and embedding tables get the shared rate.
    """

    lr: float = 1e-3
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    states: dict = field(default_factory=dict)

    def _state(self, name: str, param: Tensor) -> AdamWState:
        st = self.states.get(name)
        if st is None:
            wd = self.weight_decay if param.data.ndim >= 2 else 0.0
            st = AdamWState.for_param(param, lr=self.lr, weight_decay=wd,
                                      beta1=self.beta1, beta2=self.beta2, eps=self.eps)
            self.states[name] = st
        return st

    def step(self, named_params: dict) -> None:
        for name, param in named_params.items():
            if param.grad is not None:
                adamw_step(param, self._state(name, param))

    def zero_grad(self, named_params: dict) -> None:
        for param in named_params.values():
            param.zero_grad()
