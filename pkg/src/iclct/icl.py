"""In-context learning in CLS space: outcome decoration and causal cross-batch attention.

A unified batch is laid out as [context || target]. Context rows carry their
observed responses; an outcome decorator adds a credibility-weighted
embedding of the response to each context row's CLS token (targets pass
through untouched). Stacked attention layers then let every target row
attend to itself and the context, while a pairwise mask keeps distinct
target rows from interacting. For each target row the attention output is a
convex combination

    h_i = a_ii * value(own token) + sum_j a_ij * value(decorated context j)

whose weights sum to one: an adaptive credibility formula, with the
attention weights acting as learned credibility factors. The analysis
module re-derives this decomposition from retained traces.

Two variants exist. The nonlinear one builds queries, keys and values from
the decorated tokens; the linearized one (single layer only) builds queries
and keys from the undecorated tokens, so the attention weights are purely
feature-driven and the output is exactly linear in the context responses'
value vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError
from .layers import MLP, GatedLayerNorm, Linear


def credibility_weight(v, kappa):
    """Classical credibility weight v / (v + kappa), monotone increasing in v."""
    v = np.asarray(v, dtype=np.float64)
    return v / (v + kappa)


def build_mask(n_target: int, n_context: int, context_sees_targets: bool = True) -> np.ndarray:
    """Pairwise attention mask for a [context || target] batch, True = blocked.

    Distinct target pairs are always blocked (no interaction within the
    target batch); the diagonal is never blocked. With
    ``context_sees_targets=False`` context rows are additionally blocked
    from attending to target columns, which keeps stacked layers free of
    two-hop flow between targets through the context.
    """
    n = n_target + n_context
    if n <= 0:
        raise ContractError("mask needs at least one row")
    mask = np.zeros((n, n), dtype=bool)
    t0 = n_context  # target rows sit at the end
    mask[t0:, t0:] = True
    np.fill_diagonal(mask[t0:, t0:], False)
    if not context_sees_targets:
        mask[:t0, t0:] = True
    return mask


@dataclass
class IclConfig:
    n_layers: int = 2
    variant: str = "nonlinear"  # "nonlinear" | "linearized"
    dropout: float = 0.1
    kappa_source: str = "unit"  # "unit" | "exposure"

    def __post_init__(self):
        if self.variant not in ("nonlinear", "linearized"):
            raise ConfigError(f"unknown ICL variant {self.variant!r}")
        if self.variant == "linearized" and self.n_layers != 1:
            raise ConfigError("the linearized variant supports exactly one layer")
        if self.kappa_source not in ("unit", "exposure"):
            raise ConfigError(f"unknown kappa source {self.kappa_source!r}")


@dataclass
class AttentionTrace:
    """Row-stochastic attention matrix plus the tensors needed to re-derive it."""

    a: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    h: np.ndarray


@dataclass
class ContextTargetBatch:
    """A [context || target] batch with membership flags and pairwise mask.

    ``y`` holds the responses as fed to the network: observed values for
    context rows, zeros for target rows (their responses are used only by
    the loss, never by the forward pass). ``v`` holds case weights
    (exposures) for every row.
    """

    y: np.ndarray
    v: np.ndarray
    m_flag: np.ndarray
    n_context: int
    n_target: int
    mask: np.ndarray
    ids: np.ndarray | None = None
    y_target_true: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def assemble(cls, context_y, context_v, target_v, context_ids=None, target_ids=None,
                 target_y_true=None, context_sees_targets: bool = False) -> "ContextTargetBatch":
        context_y = np.asarray(context_y, dtype=np.float64)
        context_v = np.asarray(context_v, dtype=np.float64)
        target_v = np.asarray(target_v, dtype=np.float64)
        n_c, n_t = len(context_y), len(target_v)
        if context_ids is not None and target_ids is not None:
            overlap = np.intersect1d(context_ids, target_ids)
            if overlap.size:
                raise ContractError(f"context and target batches overlap: ids {overlap[:5]}")
            ids = np.concatenate([context_ids, target_ids])
        else:
            ids = None
        return cls(
            y=np.concatenate([context_y, np.zeros(n_t)]),
            v=np.concatenate([context_v, target_v]),
            m_flag=np.concatenate([np.ones(n_c), np.zeros(n_t)]),
            n_context=n_c,
            n_target=n_t,
            mask=build_mask(n_t, n_c, context_sees_targets=context_sees_targets),
            ids=ids,
            y_target_true=None if target_y_true is None else np.asarray(target_y_true, dtype=np.float64),
        )

    @property
    def n(self) -> int:
        return self.n_context + self.n_target

    @property
    def is_target(self) -> np.ndarray:
        return self.m_flag == 0

    def decorator_weights(self, source: str) -> np.ndarray:
        """Case weights as seen by the decorator: all ones for count data."""
        return np.ones_like(self.v) if source == "unit" else self.v


class Decorator:
    """Adds a credibility-weighted response embedding to context-row tokens.

    The response enters unscaled (not divided by the case weight); the
    scalar credibility coefficient kappa > 0 is parameterized through a
    softplus and learned by default.
    """

    def __init__(self, rng: np.random.Generator, dim: int, hidden: int = 16,
                 kappa_init: float = 1.0, trainable_kappa: bool = True):
        self.z1 = MLP(rng, [1, hidden, dim])
        raw = np.log(np.expm1(kappa_init))  # softplus inverse
        self.kappa_raw = Tensor(np.asarray(raw, dtype=np.float64), requires_grad=trainable_kappa)

    def kappa(self) -> float:
        return float(np.logaddexp(0.0, self.kappa_raw.data))

    def decorate(self, c: Tensor, y: np.ndarray, v_dec: np.ndarray,
                 m_flag: np.ndarray) -> Tensor:
        """c + (v/(v+kappa)) * m * embed(y); target rows (m=0) pass through."""
        kappa = ad.softplus(self.kappa_raw)
        v_t = Tensor(np.asarray(v_dec, dtype=np.float64)[:, None])
        weight = ad.div(v_t, ad.add(v_t, kappa))
        emb = self.z1(Tensor(np.asarray(y, dtype=np.float64)[:, None]))
        gate = Tensor(np.asarray(m_flag, dtype=np.float64)[:, None])
        return ad.add(c, ad.mul(ad.mul(weight, gate), emb))

    def named_params(self, prefix: str = "decorator") -> dict:
        out = self.z1.named_params(f"{prefix}.z1")
        out[f"{prefix}.kappa_raw"] = self.kappa_raw
        return out


class IclLayer:
    """One causal cross-batch attention block operating in CLS space.

    Identity-preserving at initialization: the value map and the final
    feed-forward layer start at zero and the layer norms start at blend
    strength zero, so a freshly inserted layer is an exact identity and
    fine-tuning literally starts from the converged base model.
    """

    def __init__(self, rng: np.random.Generator, dim: int, ffn_mult: int = 4,
                 dropout: float = 0.1):
        self.dim = dim
        self.dropout = dropout
        self.wq = Linear(rng, dim, dim)
        self.wk = Linear(rng, dim, dim)
        self.wv = Linear(rng, dim, dim, zero_init=True)
        self.ffn2 = MLP(rng, [dim, ffn_mult * dim, dim], zero_init_last=True)
        self.ln1 = GatedLayerNorm(dim)
        self.ln2 = GatedLayerNorm(dim)

    def named_params(self, prefix: str) -> dict:
        out = {}
        out.update(self.wq.named_params(f"{prefix}.wq"))
        out.update(self.wk.named_params(f"{prefix}.wk"))
        out.update(self.wv.named_params(f"{prefix}.wv"))
        out.update(self.ffn2.named_params(f"{prefix}.ffn2"))
        out.update(self.ln1.named_params(f"{prefix}.ln1"))
        out.update(self.ln2.named_params(f"{prefix}.ln2"))
        return out


def attention_head(values_src: Tensor, qk_src: Tensor, layer: IclLayer,
                   mask: np.ndarray) -> tuple[Tensor, AttentionTrace]:
    """Single masked attention head H = A V with scaling 1/sqrt(dim).

    ``qk_src`` feeds the query/key maps and ``values_src`` the value map;
    they coincide for the nonlinear variant and differ for the linearized
    one (queries/keys from undecorated tokens).
    """
    q = layer.wq(qk_src)
    k = layer.wk(qk_src)
    v = layer.wv(values_src)
    logits = ad.mul(ad.matmul(q, ad.swap_last2(k)), 1.0 / np.sqrt(layer.dim))
    a = ad.masked_softmax(logits, mask)
    h = ad.matmul(a, v)
    trace = AttentionTrace(a=a.data.copy(), q=q.data.copy(), k=k.data.copy(),
                           v=v.data.copy(), h=h.data.copy())
    return h, trace


def icl_layer_forward(c: Tensor, layer: IclLayer, mask: np.ndarray, training: bool,
                      rng: np.random.Generator | None,
                      qk_src: Tensor | None = None) -> tuple[Tensor, AttentionTrace]:
    """Attention + residual + norm, then row-wise feed-forward + residual + norm."""
    h, trace = attention_head(c, qk_src if qk_src is not None else c, layer, mask)
    mid = layer.ln1(ad.add(c, ad.dropout(h, layer.dropout, training, rng)))
    out = layer.ln2(ad.add(mid, ad.dropout(layer.ffn2(mid), layer.dropout, training, rng)))
    return out, trace


def icl_forward(base: Tensor, batch: ContextTargetBatch, decorator: Decorator,
                layers: list[IclLayer], config: IclConfig, training: bool = False,
                rng: np.random.Generator | None = None) -> tuple[Tensor, list[AttentionTrace]]:
    """Decorate once, then run the attention stack; returns all rows plus traces."""
    if config.variant == "linearized" and len(layers) != 1:
        raise ConfigError("the linearized variant supports exactly one layer")
    decorated = decorator.decorate(base, batch.y, batch.decorator_weights(config.kappa_source),
                                   batch.m_flag)
    qk_src = base if config.variant == "linearized" else None
    c = decorated
    traces = []
    for layer in layers:
        c, trace = icl_layer_forward(c, layer, batch.mask, training, rng, qk_src=qk_src)
        traces.append(trace)
    return c, traces
