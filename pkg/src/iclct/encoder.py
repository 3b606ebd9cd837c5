"""Credibility transformer encoder: feature tokenizer, CLS attention stack, gate.

Each tabular instance becomes T feature tokens plus a prepended learnable
CLS token, all of width ``dim``. A small self-attention stack contextualizes
the tokens; the CLS output is then blended with a learnable collective
(population prior) token by the credibility gate. During training the gate
draws a Bernoulli per instance (keep the instance token with probability p,
else substitute the collective token), which trains the prior like a
dropout mechanism; at evaluation it blends deterministically with weight
alpha.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import MLP, LayerNorm, Linear


class FeatureTokenizer:
    """Embeds categorical levels and continuous values into shared token space."""

    def __init__(self, rng: np.random.Generator, cat_cardinalities: list[int],
                 n_continuous: int, dim: int):
        self.dim = dim
        self.n_cat = len(cat_cardinalities)
        self.n_cont = n_continuous
        self.n_features = self.n_cat + n_continuous
        scale = 0.02
        self.cat_tables = [
            Tensor(rng.normal(0.0, scale, size=(card, dim)), requires_grad=True)
            for card in cat_cardinalities
        ]
        self.cont_w = Tensor(rng.normal(0.0, scale, size=(n_continuous, dim)), requires_grad=True)
        self.cont_b = Tensor(np.zeros((n_continuous, dim)), requires_grad=True)
        self.feature_ids = Tensor(rng.normal(0.0, scale, size=(self.n_features, dim)),
                                  requires_grad=True)
        self.cls = Tensor(rng.normal(0.0, scale, size=dim), requires_grad=True)

    def tokenize(self, cat: np.ndarray, cont: np.ndarray) -> Tensor:
        """Token matrix (B, T+1, dim): CLS row first, then one row per feature."""
        batch = cat.shape[0] if self.n_cat else cont.shape[0]
        parts = []
        if self.n_cat:
            cat_tokens = ad.stack(
                [ad.embedding(table, cat[:, j]) for j, table in enumerate(self.cat_tables)],
                axis=1,
            )
            parts.append(cat_tokens)
        if self.n_cont:
            x = Tensor(np.asarray(cont, dtype=np.float64).reshape(batch, self.n_cont, 1))
            parts.append(ad.add(ad.mul(x, self.cont_w), self.cont_b))
        feats = parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)
        feats = ad.add(feats, self.feature_ids)
        cls_row = ad.broadcast_to(ad.reshape(self.cls, (1, 1, self.dim)), (batch, 1, self.dim))
        return ad.concat([cls_row, feats], axis=1)

    def named_params(self, prefix: str = "tokenizer") -> dict:
        out = {}
        for j, table in enumerate(self.cat_tables):
            out[f"{prefix}.cat{j}"] = table
        out[f"{prefix}.cont_w"] = self.cont_w
        out[f"{prefix}.cont_b"] = self.cont_b
        out[f"{prefix}.feature_ids"] = self.feature_ids
        out[f"{prefix}.cls"] = self.cls
        return out


class EncoderLayer:
    """Post-norm transformer block: multi-head self-attention + feed-forward."""

    def __init__(self, rng: np.random.Generator, dim: int, heads: int,
                 ffn_mult: int = 4, dropout: float = 0.1):
        assert dim % heads == 0, "token width must be divisible by the head count"
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.dropout = dropout
        self.wq = Linear(rng, dim, dim)
        self.wk = Linear(rng, dim, dim)
        self.wv = Linear(rng, dim, dim)
        self.wo = Linear(rng, dim, dim)
        self.ffn = MLP(rng, [dim, ffn_mult * dim, dim])
        self.ln1 = LayerNorm(dim)
        self.ln2 = LayerNorm(dim)
        self.last_attention: np.ndarray | None = None

    def _split_heads(self, x: Tensor, batch: int, tokens: int) -> Tensor:
        x = ad.reshape(x, (batch, tokens, self.heads, self.head_dim))
        return ad.transpose(x, (0, 2, 1, 3))

    def __call__(self, x: Tensor, training: bool, rng: np.random.Generator | None) -> Tensor:
        batch, tokens, _ = x.shape
        q = self._split_heads(self.wq(x), batch, tokens)
        k = self._split_heads(self.wk(x), batch, tokens)
        v = self._split_heads(self.wv(x), batch, tokens)
        logits = ad.mul(ad.matmul(q, ad.swap_last2(k)), 1.0 / np.sqrt(self.head_dim))
        attn = ad.masked_softmax(logits)
        self.last_attention = attn.data
        heads = ad.matmul(attn, v)
        merged = ad.reshape(ad.transpose(heads, (0, 2, 1, 3)), (batch, tokens, self.dim))
        mid = self.ln1(ad.add(x, ad.dropout(self.wo(merged), self.dropout, training, rng)))
        return self.ln2(ad.add(mid, ad.dropout(self.ffn(mid), self.dropout, training, rng)))

    def named_params(self, prefix: str) -> dict:
        out = {}
        out.update(self.wq.named_params(f"{prefix}.wq"))
        out.update(self.wk.named_params(f"{prefix}.wk"))
        out.update(self.wv.named_params(f"{prefix}.wv"))
        out.update(self.wo.named_params(f"{prefix}.wo"))
        out.update(self.ffn.named_params(f"{prefix}.ffn"))
        out.update(self.ln1.named_params(f"{prefix}.ln1"))
        out.update(self.ln2.named_params(f"{prefix}.ln2"))
        return out


class CredibilityGate:
    """Blend of instance CLS output and a learnable collective token.

    Training mode: per-instance Bernoulli(p) keeps the instance token, else
    substitutes the collective one. Evaluation mode: deterministic blend
    alpha * instance + (1 - alpha) * collective, with alpha = sigmoid(raw).
    """

    def __init__(self, rng: np.random.Generator, dim: int, p: float = 0.9,
                 alpha_init: float = 0.9):
        self.p = float(p)
        self.collective = Tensor(rng.normal(0.0, 0.02, size=dim), requires_grad=True)
        self.alpha_raw = Tensor(np.log(alpha_init / (1.0 - alpha_init)), requires_grad=True)

    def alpha(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.alpha_raw.data)))

    def __call__(self, c_inst: Tensor, training: bool,
                 rng: np.random.Generator | None) -> Tensor:
        if training:
            keep = (rng.random(c_inst.shape[0]) < self.p).astype(np.float64)[:, None]
            keep_t = Tensor(keep)
            return ad.add(ad.mul(keep_t, c_inst), ad.mul(Tensor(1.0 - keep), self.collective))
        a = ad.sigmoid(self.alpha_raw)
        return ad.add(ad.mul(a, c_inst), ad.mul(ad.sub(1.0, a), self.collective))

    def named_params(self, prefix: str = "gate") -> dict:
        return {f"{prefix}.collective": self.collective, f"{prefix}.alpha_raw": self.alpha_raw}


class CtEncoder:
    """Tokenizer + attention stack + credibility gate; output lives in R^dim."""

    def __init__(self, rng: np.random.Generator, cat_cardinalities: list[int],
                 n_continuous: int, dim: int = 32, heads: int = 4, n_layers: int = 2,
                 ffn_mult: int = 4, dropout: float = 0.1, gate_p: float = 0.9,
                 alpha_init: float = 0.9):
        self.tokenizer = FeatureTokenizer(rng, cat_cardinalities, n_continuous, dim)
        self.layers = [EncoderLayer(rng, dim, heads, ffn_mult, dropout) for _ in range(n_layers)]
        self.gate = CredibilityGate(rng, dim, gate_p, alpha_init)
        self.dim = dim

    def encode_tokens(self, tokens: Tensor, training: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        for layer in self.layers:
            tokens = layer(tokens, training, rng)
        return tokens

    def cls_embedding(self, cat: np.ndarray, cont: np.ndarray, training: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        """Credibilitized CLS embedding for a batch, shape (B, dim)."""
        tokens = self.tokenizer.tokenize(cat, cont)
        encoded = self.encode_tokens(tokens, training, rng)
        c_inst = ad.take(encoded, 0, axis=1)
        return self.gate(c_inst, training, rng)

    def embed_batch(self, cat: np.ndarray, cont: np.ndarray,
                    max_batch: int = 4096) -> np.ndarray:
        """Deterministic evaluation-mode embeddings, computed off-tape in slices."""
        chunks = []
        n = cat.shape[0]
        for lo in range(0, n, max_batch):
            hi = min(lo + max_batch, n)
            chunks.append(self.cls_embedding(cat[lo:hi], cont[lo:hi], training=False).data)
        return np.concatenate(chunks, axis=0)

    def named_params(self, prefix: str = "") -> dict:
        pre = f"{prefix}." if prefix else ""
        out = self.tokenizer.named_params(f"{pre}tokenizer")
        for i, layer in enumerate(self.layers):
            out.update(layer.named_params(f"{pre}encoder.{i}"))
        out.update(self.gate.named_params(f"{pre}gate"))
        return out
