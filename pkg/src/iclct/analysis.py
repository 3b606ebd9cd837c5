"""Model analysis instruments: credibility checks, PCA trajectories, neighbors.

verify_credibility re-derives, from retained attention traces, the convex
credibility decomposition of every target row's attention output and
confirms (a) the decomposition reproduces the head output, (b) the weights
over {self} + context sum to one, (c) weights on other targets are exactly
zero, and (d) the weights match a direct re-evaluation of the masked
softmax from the stored queries and keys.

The PCA instrument fits a single eigendecomposition-based PCA on the base
model's test CLS tokens, then projects the token sets of all later model
stages with that same fit, so stages are directly comparable. Neighbor
reports list the nearest training policies of probe rows in each stage's
token space (Euclidean distance on raw tokens; metric switchable).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .config import PhaseConfig
from .data import EncodedDataset, PolicyTable
from .errors import ConfigError, VerificationError
from .icl import AttentionTrace
from .training import ModelBundle

NEIGHBOR_STAGES = ("phase1-ct", "pre-base", "pre-decorated", "pre-final",
                   "post-base", "post-decorated", "post-final")
PCA_STAGES = ("ct-base", "pre-decorated", "pre-final",
              "post-base", "post-decorated", "post-final")
NEIGHBOR_COLUMNS = ("Exposure", "Area", "VehPower", "VehAge", "DrivAge",
                    "BonusMalus", "VehBrand", "VehGas", "Region")


# ---------------------------------------------------------------------------
# credibility structure verification
# ---------------------------------------------------------------------------

@dataclass
class CredibilityCheck:
    n_layers: int
    n_target: int
    max_decomposition_residual: float
    max_row_sum_residual: float
    max_weight_residual: float
    target_target_all_zero: bool

    @property
    def ok(self) -> bool:
        return (self.max_decomposition_residual <= 1e-9
                and self.max_row_sum_residual <= 1e-12
                and self.max_weight_residual <= 1e-12
                and self.target_target_all_zero)


def _recompute_weights(trace: AttentionTrace, i: int, allowed: np.ndarray, dim: int) -> np.ndarray:
    """Direct evaluation of the credibility weights from queries and keys.

    a_ij = exp(q_i k_j / sqrt(dim)) / sum_{l in allowed} exp(q_i k_l / sqrt(dim)),
    evaluated with a max shift over the allowed set (mathematically identical).
    """
    logits = np.array([np.dot(trace.q[i], trace.k[j]) for j in allowed]) / np.sqrt(dim)
    e = np.exp(logits - logits.max())
    return e / e.sum()


def verify_credibility_traces(traces: list, n_context: int, n_target: int, dim: int,
                              strict: bool = True) -> CredibilityCheck:
    """Run all four credibility checks on retained per-layer traces."""
    t0 = n_context
    n = n_context + n_target
    max_dec = max_sum = max_w = 0.0
    zeros_ok = True
    for layer_no, tr in enumerate(traces):
        for i in range(t0, n):
            allowed = np.concatenate([np.arange(t0), [i]])
            recon = sum(tr.a[i, j] * tr.v[j] for j in allowed)
            dec_res = float(np.max(np.abs(recon - tr.h[i])))
            sum_res = float(abs(tr.a[i, allowed].sum() - 1.0))
            others = [j for j in range(t0, n) if j != i]
            zeros = bool(np.all(tr.a[i, others] == 0.0)) if others else True
            w_res = float(np.max(np.abs(
                _recompute_weights(tr, i, allowed, dim) - tr.a[i, allowed])))
            if strict and (dec_res > 1e-9 or sum_res > 1e-12 or w_res > 1e-12 or not zeros):
                raise VerificationError(
                    f"credibility check failed at layer {layer_no}, target row {i}: "
                    f"decomposition {dec_res:.3e}, row sum {sum_res:.3e}, "
                    f"weights {w_res:.3e}, target-target zeros {zeros}"
                )
            max_dec = max(max_dec, dec_res)
            max_sum = max(max_sum, sum_res)
            max_w = max(max_w, w_res)
            zeros_ok = zeros_ok and zeros
    return CredibilityCheck(
        n_layers=len(traces), n_target=n_target,
        max_decomposition_residual=max_dec, max_row_sum_residual=max_sum,
        max_weight_residual=max_w, target_target_all_zero=zeros_ok,
    )


def verify_credibility(bundle: ModelBundle, pool: EncodedDataset,
                       ctx_rows: np.ndarray, target_rows: np.ndarray,
                       strict: bool = True) -> CredibilityCheck:
    """Forward one [context || target] batch in eval mode and check its traces."""
    _, batch, _, traces = bundle.forward_icl(pool, ctx_rows, pool, target_rows,
                                             training=False, rng=None)
    return verify_credibility_traces(traces, batch.n_context, batch.n_target,
                                     bundle.config.model.dim, strict=strict)


# ---------------------------------------------------------------------------
# PCA instrument
# ---------------------------------------------------------------------------

@dataclass
class PcaModel:
    components: np.ndarray          # (d, k), orthonormal columns
    explained_variance: np.ndarray  # (k,), non-increasing
    mean: np.ndarray                # (d,)

    def project(self, x: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(x) - self.mean) @ self.components


def fit_pca(x: np.ndarray, k: int | None = None) -> PcaModel:
    """PCA by eigendecomposition of the covariance (population normalization)."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[1]
    if k is None:
        k = d
    if k > d:
        raise ConfigError(f"cannot extract {k} components from dimension {d}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / x.shape[0]
    eigval, eigvec = np.linalg.eigh(cov)
    order = np.argsort(eigval)[::-1][:k]
    return PcaModel(components=eigvec[:, order],
                    explained_variance=np.maximum(eigval[order], 0.0),
                    mean=mean)


def decile_probe_indices(predictions: np.ndarray, n_probes: int = 10) -> np.ndarray:
    """Rows sitting at the prediction deciles (mid-decile quantiles)."""
    predictions = np.asarray(predictions)
    order = np.argsort(predictions, kind="stable")
    qs = (np.arange(n_probes) + 0.5) / n_probes
    pos = np.minimum((qs * len(predictions)).astype(int), len(predictions) - 1)
    return order[pos]


def pca_trajectories(base_test_tokens: np.ndarray, stage_probe_tokens: dict,
                     k: int = 2) -> tuple[PcaModel, dict]:
    """Fit PCA once on the base model's test CLS tokens, project every stage."""
    model = fit_pca(base_test_tokens, k)
    return model, {stage: model.project(tokens) for stage, tokens in stage_probe_tokens.items()}


# ---------------------------------------------------------------------------
# stage token computation
# ---------------------------------------------------------------------------

def _decorated_tokens(bundle: ModelBundle, base: np.ndarray, ds: EncodedDataset) -> np.ndarray:
    """Decorate rows with their own observed outcome (context semantics, m=1).

    Targets are never decorated during inference; this analysis view applies
    the decorator to every row to make the decoration step visible.
    """
    weights = np.ones(ds.n) if bundle.config.model.kappa_source == "unit" else ds.v
    out = bundle.decorator.decorate(Tensor(base), ds.y, weights, np.ones(ds.n))
    return out.data


def compute_stage_tokens(probe_ds: EncodedDataset, pool: EncodedDataset,
                         phase2_bundle: ModelBundle, phase3_bundle: ModelBundle | None,
                         phase1_bundle: ModelBundle | None = None,
                         untrained_bundle: ModelBundle | None = None,
                         phase_cfg: PhaseConfig | None = None,
                         exclude_self: bool = False) -> dict:
    """Token sets of the probe rows at every analysis stage.

    pre-* stages come from the phase-2 bundle, post-* from the phase-3
    bundle (skipped when absent); "ct-base" from the phase-1 bundle and
    "phase1-ct" from an untrained copy, when provided. "*-final" rows are
    the attention stack's outputs under the standard chunked inference plan.
    """
    cfg = phase_cfg or phase2_bundle.config.phase2
    stages = {}
    if untrained_bundle is not None:
        stages["phase1-ct"] = untrained_bundle.embed_eval(probe_ds)
    if phase1_bundle is not None:
        stages["ct-base"] = phase1_bundle.embed_eval(probe_ds)
    for tag, bundle in (("pre", phase2_bundle), ("post", phase3_bundle)):
        if bundle is None:
            continue
        base = bundle.embed_eval(probe_ds)
        stages[f"{tag}-base"] = base
        stages[f"{tag}-decorated"] = _decorated_tokens(bundle, base, probe_ds)
        stages[f"{tag}-final"] = bundle.icl_rows(probe_ds, pool, cfg, exclude_self=exclude_self)
    return stages


# ---------------------------------------------------------------------------
# nearest-neighbor report
# ---------------------------------------------------------------------------

@dataclass
class NeighborRow:
    stage: str
    rank: int
    distance: float
    covariates: dict


def _nearest(corpus: np.ndarray, probe: np.ndarray, n: int, metric: str) -> list:
    if metric == "euclidean":
        d = np.sqrt(np.maximum(((corpus - probe) ** 2).sum(axis=1), 0.0))
    elif metric == "cosine":
        cn = corpus / np.linalg.norm(corpus, axis=1, keepdims=True)
        d = 1.0 - cn @ (probe / np.linalg.norm(probe))
    else:
        raise ConfigError(f"unknown metric {metric!r}")
    order = np.lexsort((np.arange(len(d)), d))[:n]
    return [(int(i), float(d[i])) for i in order]


def neighbor_report(probe_tokens: dict, corpus_tokens: dict, corpus_table: PolicyTable,
                    n_neighbors: int = 5, metric: str = "euclidean") -> list:
    """Nearest corpus policies per stage, with their raw covariates.

    probe_tokens / corpus_tokens: stage -> (d,) probe vector / (N, d) corpus
    matrix. Only stages present in both dicts are reported.
    """
    rows = []
    for stage in NEIGHBOR_STAGES:
        if stage not in probe_tokens or stage not in corpus_tokens:
            continue
        for rank, (idx, dist) in enumerate(
                _nearest(corpus_tokens[stage], probe_tokens[stage], n_neighbors, metric),
                start=1):
            record = corpus_table.row(idx)
            rows.append(NeighborRow(
                stage=stage, rank=rank, distance=dist,
                covariates={c: record[c] for c in NEIGHBOR_COLUMNS},
            ))
    return rows


# ---------------------------------------------------------------------------
# CSV export helpers (byte-stable formatting)
# ---------------------------------------------------------------------------

def format_value(x) -> str:
    """Stable CSV cell: floats at 6 significant digits, everything else as str."""
    if isinstance(x, (float, np.floating)):
        return f"{x:.6g}"
    return str(x)


def write_csv_rows(path, header: list, rows: list) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_value(x) for x in row) + "\n")


def attention_csv_rows(traces: list) -> list:
    """(i, j, layer, weight) rows for every positive attention entry."""
    rows = []
    for layer_no, tr in enumerate(traces):
        nz = np.argwhere(tr.a > 0.0)
        for i, j in nz:
            rows.append((int(i), int(j), layer_no, float(tr.a[i, j])))
    return rows
