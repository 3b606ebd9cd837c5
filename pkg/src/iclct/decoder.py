"""Decoder head from CLS space to claim frequency, plus Poisson deviance losses.

The decoder maps a CLS embedding to a log rate; exposure enters the
prediction multiplicatively as an offset, mu = v * exp(log_rate). Two loss
forms exist side by side: the unweighted mean deviance used for reporting
and phase-1 training, and the case-weighted target-only form used by the
in-context training phases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DomainError
from .layers import MLP


@dataclass
class Prediction:
    """Per-row prediction: log rate, rate per unit exposure, expected count."""

    log_rate: np.ndarray
    rate: np.ndarray
    mu: np.ndarray


class Decoder:
    """MLP log-frequency head; freezable after the supervised phase."""

    def __init__(self, rng: np.random.Generator, dim: int, hidden: int = 32):
        self.mlp = MLP(rng, [dim, hidden, 1])
        self.frozen = False

    def decode(self, c: Tensor) -> Tensor:
        """Log rate per row, shape (n, 1); exponentiation is left to predict."""
        return self.mlp(c)

    def predict(self, c: Tensor, v: np.ndarray) -> Prediction:
        v = np.asarray(v, dtype=np.float64)
        log_rate = self.decode(c).data.reshape(-1)
        rate = np.exp(log_rate)
        return Prediction(log_rate=log_rate, rate=rate, mu=v * rate)

    def mu_tensor(self, c: Tensor, v: np.ndarray) -> Tensor:
        """Differentiable expected counts v * exp(decode(c)), shape (n,)."""
        z = ad.reshape(self.decode(c), (-1,))
        return ad.mul(Tensor(np.asarray(v, dtype=np.float64)), ad.exp(z))

    def named_params(self, prefix: str = "decoder") -> dict:
        return self.mlp.named_params(f"{prefix}.mlp")

    def set_output_bias(self, value: float) -> None:
        self.mlp.layers[-1].b.data[:] = value


class NullModel:
    """Intercept-only baseline: one global rate fitted on training data."""

    def __init__(self, log_rate: float):
        self.log_rate = float(log_rate)

    @classmethod
    def fit(cls, y: np.ndarray, v: np.ndarray) -> "NullModel":
        return cls(np.log(np.asarray(y).sum() / np.asarray(v).sum()))

    def predict(self, v: np.ndarray) -> Prediction:
        v = np.asarray(v, dtype=np.float64)
        rate = np.exp(self.log_rate)
        return Prediction(
            log_rate=np.full(v.shape, self.log_rate),
            rate=np.full(v.shape, rate),
            mu=v * rate,
        )


def poisson_deviance(y, mu) -> float:
    """Mean Poisson deviance 2/n * sum[mu - y - y*log(mu/y)], with 0*log(0) = 0.

    Returned in natural units; multiply by 100 for the conventional 1e-2
    reporting scale.
    """
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if np.any(mu <= 0):
        raise DomainError("poisson deviance needs strictly positive predictions")
    if np.any(y < 0):
        raise DomainError("poisson deviance needs non-negative counts")
    terms = mu - y
    pos = y > 0
    terms[pos] -= y[pos] * np.log(mu[pos] / y[pos])
    return float(2.0 * terms.mean())


def deviance_rows(mu: Tensor, y: np.ndarray) -> Tensor:
    """Differentiable per-row deviance 2*(mu - y - y*log(mu/y)), shape (n,)."""
    y = np.asarray(y, dtype=np.float64)
    # y*log(y) with the 0*log(0) = 0 convention; constant w.r.t. the graph
    ylogy = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0)), 0.0)
    inner = ad.add(ad.sub(mu, Tensor(y)), ad.sub(Tensor(ylogy), ad.mul(Tensor(y), ad.log(mu))))
    return ad.mul(inner, 2.0)


def mean_deviance_loss(mu: Tensor, y: np.ndarray) -> Tensor:
    """Unweighted mean deviance, the supervised-phase training loss."""
    return ad.tmean(deviance_rows(mu, y))


def icl_loss_tensor(mu: Tensor, y: np.ndarray, v: np.ndarray, is_target: np.ndarray) -> Tensor:
    """Case-weighted deviance over target rows only.

    Implemented with per-row sample weights (context rows weigh 0, target
    rows weigh their case weight v_i), averaged over the number of targets.
    """
    is_target = np.asarray(is_target, dtype=bool)
    weights = np.where(is_target, np.asarray(v, dtype=np.float64), 0.0)
    n_target = int(is_target.sum())
    rows = deviance_rows(mu, np.asarray(y, dtype=np.float64))
    return ad.mul(ad.tsum(ad.mul(rows, Tensor(weights))), 1.0 / n_target)


def icl_loss(y, v, is_target, mu) -> float:
    """Numpy evaluation of the target-only case-weighted deviance."""
    y = np.asarray(y, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    is_target = np.asarray(is_target, dtype=bool)
    terms = mu - y
    pos = y > 0
    terms[pos] -= y[pos] * np.log(mu[pos] / y[pos])
    weights = np.where(is_target, v, 0.0)
    return float(2.0 * (weights * terms).sum() / is_target.sum())
