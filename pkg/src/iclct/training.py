"""Three-phase training pipeline, evaluation, ensembling and checkpointing.

Phase 1 trains the base credibility transformer (tokenizer, encoder, gate,
decoder) under the plain Poisson deviance. Phase 2 inserts the outcome
decorator and the in-context attention stack with identity-preserving
initialization, freezes the decoder, and fine-tunes everything else on
[context || target] batches whose loss touches only the target rows. Phase
3 unfreezes the decoder and fine-tunes the whole architecture at a small
learning rate. Early stopping tracks validation deviance (plain mode in
phase 1, in-context mode afterwards) and always restores the best
checkpoint, the initial state included.
"""

from __future__ import annotations

import contextlib
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, backward
from .checkpoint import load_container, save_container
from .config import PhaseConfig, RunConfig
from .data import EncodedDataset
from .decoder import Decoder, NullModel, icl_loss_tensor, mean_deviance_loss, poisson_deviance
from .encoder import CtEncoder
from .errors import ConfigError, ContractError, FreezeViolationError, TrainingDivergedError
from .icl import ContextTargetBatch, Decorator, IclConfig, IclLayer, icl_forward
from .optim import AdamW
from .retrieval import assemble_context, build_index

logger = logging.getLogger(__name__)

GROUPS = ("tokenizer", "encoder", "gate", "decorator", "icl", "decoder")

# fixed per-purpose stream labels so every phase draws from its own rng
_STREAM_VALSPLIT = 1
_STREAM_INIT1 = 2
_STREAM_TRAIN1 = 3
_STREAM_INIT2 = 4
_STREAM_TRAIN2 = 5
_STREAM_TRAIN3 = 6


def stream_rng(seed: int, label: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(label)]))


def deterministic_guard(enabled: bool = True):
    """Limit BLAS threading so repeated runs are bit-identical."""
    if not enabled:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1)
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()


def split_validation(n: int, seed: int, fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """One validation split per run seed, shared by all phases."""
    rng = stream_rng(seed, _STREAM_VALSPLIT)
    order = rng.permutation(n)
    n_val = int(round(fraction * n))
    return np.sort(order[n_val:]), np.sort(order[:n_val])


@dataclass
class TrainingReport:
    phase: int
    param_count: int
    hyperparameters: dict
    epochs_run: int = 0
    best_epoch: int = 0
    initial_val_loss: float = float("nan")
    best_val_loss: float = float("nan")
    train_losses: list = field(default_factory=list)  # per-epoch, 1e-2 units
    val_losses: list = field(default_factory=list)    # per-epoch, 1e-2 units
    in_sample: float | None = None
    out_of_sample: float | None = None
    wall_time_s: float = 0.0  # excluded from deterministic metrics files

    def metrics_rows(self) -> list:
        """Deterministic key/value rows for metrics.csv (no wall time)."""
        rows = [
            ("phase", self.phase),
            ("param_count", self.param_count),
            ("epochs_run", self.epochs_run),
            ("best_epoch", self.best_epoch),
            ("initial_val_loss", self.initial_val_loss),
            ("best_val_loss", self.best_val_loss),
        ]
        if self.in_sample is not None:
            rows.append(("in_sample", self.in_sample))
        if self.out_of_sample is not None:
            rows.append(("out_of_sample", self.out_of_sample))
        rows += [(f"train_loss_epoch_{i}", x) for i, x in enumerate(self.train_losses, 1)]
        rows += [(f"val_loss_epoch_{i}", x) for i, x in enumerate(self.val_losses, 1)]
        return rows


class ModelBundle:
    """All parameter groups with per-group freeze flags and metadata."""

    def __init__(self, config: RunConfig, cat_cardinalities: list, n_continuous: int,
                 seed: int):
        m = config.model
        rng = stream_rng(seed, _STREAM_INIT1)
        self.config = config
        self.cat_cardinalities = list(cat_cardinalities)
        self.n_continuous = int(n_continuous)
        self.seed = int(seed)
        self.phase = 0
        self.encoder = CtEncoder(rng, self.cat_cardinalities, self.n_continuous,
                                 dim=m.dim, heads=m.heads, n_layers=m.encoder_layers,
                                 ffn_mult=m.ffn_mult, dropout=m.dropout,
                                 gate_p=m.gate_p, alpha_init=m.alpha_init)
        self.decoder = Decoder(rng, m.dim, hidden=m.decoder_hidden)
        self.decorator: Decorator | None = None
        self.icl_layers: list[IclLayer] = []
        self.freeze = {g: False for g in GROUPS}

    # -- parameter bookkeeping -------------------------------------------
    def insert_icl_components(self) -> None:
        """Fresh decorator + identity-initialized attention stack (phase 2)."""
        if self.decorator is not None:
            raise ContractError("in-context components already inserted")
        m = self.config.model
        rng = stream_rng(self.seed, _STREAM_INIT2)
        self.decorator = Decorator(rng, m.dim, hidden=m.decorator_hidden,
                                   kappa_init=m.kappa_init,
                                   trainable_kappa=m.kappa_trainable)
        self.icl_layers = [IclLayer(rng, m.dim, ffn_mult=m.ffn_mult, dropout=m.icl_dropout)
                           for _ in range(m.icl_layers)]

    def icl_config(self) -> IclConfig:
        m = self.config.model
        return IclConfig(n_layers=m.icl_layers, variant=m.icl_variant,
                         dropout=m.icl_dropout, kappa_source=m.kappa_source)

    def named_params(self) -> dict:
        out = dict(self.encoder.named_params())
        if self.decorator is not None:
            out.update(self.decorator.named_params("decorator"))
        for i, layer in enumerate(self.icl_layers):
            out.update(layer.named_params(f"icl.{i}"))
        out.update(self.decoder.named_params("decoder"))
        return out

    @staticmethod
    def group_of(name: str) -> str:
        return name.split(".", 1)[0]

    def trainable_params(self) -> dict:
        return {n: p for n, p in self.named_params().items()
                if not self.freeze[self.group_of(n)]}

    def apply_freeze(self, frozen_groups: set) -> None:
        for g in GROUPS:
            self.freeze[g] = g in frozen_groups
        for name, p in self.named_params().items():
            if name == "decorator.kappa_raw" and not self.config.model.kappa_trainable:
                p.requires_grad = False
                continue
            p.requires_grad = not self.freeze[self.group_of(name)]
        self.decoder.frozen = self.freeze["decoder"]

    def param_count(self) -> int:
        return sum(p.size for p in self.named_params().values())

    def group_bytes(self, group: str) -> bytes:
        return b"".join(p.data.tobytes() for n, p in self.named_params().items()
                        if self.group_of(n) == group)

    def snapshot(self) -> dict:
        return {n: p.data.copy() for n, p in self.named_params().items()}

    def restore(self, snap: dict) -> None:
        for n, p in self.named_params().items():
            p.data = snap[n].copy()

    # -- forward helpers ---------------------------------------------------
    def embed_eval(self, ds: EncodedDataset, max_batch: int = 4096) -> np.ndarray:
        return self.encoder.embed_batch(ds.cat, ds.cont, max_batch=max_batch)

    def predict_plain(self, ds: EncodedDataset, max_batch: int = 4096) -> np.ndarray:
        mus = []
        for lo in range(0, ds.n, max_batch):
            hi = min(lo + max_batch, ds.n)
            c = self.encoder.cls_embedding(ds.cat[lo:hi], ds.cont[lo:hi], training=False)
            mus.append(self.decoder.predict(c, ds.v[lo:hi]).mu)
        return np.concatenate(mus)

    def forward_icl(self, pool: EncodedDataset, ctx_rows: np.ndarray,
                    target_ds: EncodedDataset, target_rows: np.ndarray,
                    training: bool, rng: np.random.Generator | None):
        """One [context || target] pass; returns (mu tensor, batch, rows, traces)."""
        cat = np.concatenate([pool.cat[ctx_rows], target_ds.cat[target_rows]])
        cont = np.concatenate([pool.cont[ctx_rows], target_ds.cont[target_rows]])
        # when targets come from the pool itself, row positions identify rows
        # and the assembly enforces context/target disjointness; independent
        # target sets are disjoint from the pool by construction
        same_pool = target_ds is pool
        batch = ContextTargetBatch.assemble(
            context_y=pool.y[ctx_rows],
            context_v=pool.v[ctx_rows],
            target_v=target_ds.v[target_rows],
            context_ids=np.asarray(ctx_rows) if same_pool else None,
            target_ids=np.asarray(target_rows) if same_pool else None,
        )
        base = self.encoder.cls_embedding(cat, cont, training=training, rng=rng)
        rows, traces = icl_forward(base, batch, self.decorator, self.icl_layers,
                                   self.icl_config(), training=training, rng=rng)
        mu = self.decoder.mu_tensor(rows, batch.v)
        return mu, batch, rows, traces

    def icl_rows(self, target_ds: EncodedDataset, pool: EncodedDataset,
                 phase_cfg: PhaseConfig, exclude_self: bool = False) -> np.ndarray:
        """Chunked inference: retrieve context per target chunk, keep the
        target rows of the attention stack's output (still in CLS space)."""
        if self.decorator is None:
            raise ContractError("bundle has no in-context components; run phase 2 first")
        pool_embs = self.embed_eval(pool)
        index = build_index(pool_embs, np.arange(pool.n))
        target_embs = pool_embs if target_ds is pool else self.embed_eval(target_ds)
        m = phase_cfg.chunk_size
        out = np.empty((target_ds.n, self.config.model.dim))
        for lo in range(0, target_ds.n, m):
            hi = min(lo + m, target_ds.n)
            exclude = np.arange(lo, hi) if exclude_self else None
            asm = assemble_context(index, target_embs[lo:hi], k=phase_cfg.k_neighbors,
                                   c=phase_cfg.context_size, exclude_ids=exclude)
            _, batch, rows, _ = self.forward_icl(pool, asm.selected_ids, target_ds,
                                                 np.arange(lo, hi), training=False, rng=None)
            out[lo:hi] = rows.data[batch.n_context:]
        return out

    def icl_predict(self, target_ds: EncodedDataset, pool: EncodedDataset,
                    phase_cfg: PhaseConfig, exclude_self: bool = False) -> np.ndarray:
        """Frozen-decoder predictions on the in-context-enhanced target rows."""
        rows = self.icl_rows(target_ds, pool, phase_cfg, exclude_self)
        return self.decoder.predict(Tensor(rows), target_ds.v).mu

    # -- persistence -------------------------------------------------------
    def save(self, path) -> None:
        metadata = {
            "format": "model-bundle",
            "phase": str(self.phase),
            "seed": str(self.seed),
            "config": self.config.to_json(indent=None),
            "freeze": json.dumps(self.freeze, sort_keys=True),
            "cat_cardinalities": json.dumps(self.cat_cardinalities),
            "n_continuous": str(self.n_continuous),
            "has_icl": str(int(self.decorator is not None)),
        }
        save_container(path, metadata, {n: p.data for n, p in self.named_params().items()})

    @classmethod
    def load(cls, path) -> "ModelBundle":
        metadata, tensors = load_container(path)
        if metadata.get("format") != "model-bundle":
            raise ContractError(f"{path} does not hold a model bundle")
        config = RunConfig.from_json(metadata["config"])
        bundle = cls(config, json.loads(metadata["cat_cardinalities"]),
                     int(metadata["n_continuous"]), seed=int(metadata["seed"]))
        if metadata.get("has_icl") == "1":
            bundle.insert_icl_components()
        bundle.phase = int(metadata["phase"])
        params = bundle.named_params()
        if set(params) != set(tensors):
            raise ContractError("checkpoint tensor names do not match the architecture")
        for name, p in params.items():
            if p.data.shape != tensors[name].shape:
                raise ContractError(f"shape mismatch for {name}")
            p.data = tensors[name].copy()
        bundle.apply_freeze({g for g, f in json.loads(metadata["freeze"]).items() if f})
        return bundle


class EarlyStopping:
    """Best-checkpoint tracking with patience; epoch 0 (initial state) counts."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = float("inf")
        self.best_epoch = -1
        self.best_state: dict | None = None
        self.since_improvement = 0

    def observe(self, epoch: int, loss: float, bundle: ModelBundle) -> bool:
        """Record an epoch's validation loss; True means stop now."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.best_state = bundle.snapshot()
            self.since_improvement = 0
            return False
        self.since_improvement += 1
        return self.since_improvement >= self.patience

    def restore_best(self, bundle: ModelBundle) -> None:
        if self.best_state is not None:
            bundle.restore(self.best_state)


def _check_finite(loss_value: float, phase: int, epoch: int, step: int) -> None:
    if not np.isfinite(loss_value):
        raise TrainingDivergedError(
            f"phase {phase} loss became {loss_value} at epoch {epoch}, step {step}"
        )


def _phase_hyper(cfg: PhaseConfig, phase: int) -> dict:
    out = {"lr": cfg.lr, "weight_decay": cfg.weight_decay, "beta1": cfg.beta1,
           "beta2": cfg.beta2, "eps": cfg.eps, "epochs": cfg.epochs, "patience": cfg.patience}
    if phase == 1:
        out["batch_size"] = cfg.batch_size
    else:
        out.update(context_size=cfg.context_size, chunk_size=cfg.chunk_size,
                   k_neighbors=cfg.k_neighbors)
    return out


def validation_deviance_plain(bundle: ModelBundle, ds: EncodedDataset) -> float:
    return 100.0 * poisson_deviance(ds.y, bundle.predict_plain(ds))


def validation_deviance_icl(bundle: ModelBundle, ds: EncodedDataset, pool: EncodedDataset,
                            cfg: PhaseConfig) -> float:
    return 100.0 * poisson_deviance(ds.y, bundle.icl_predict(ds, pool, cfg))


def phase1_train(train_ds: EncodedDataset, config: RunConfig,
                 bundle: ModelBundle | None = None) -> tuple[ModelBundle, TrainingReport]:
    """Supervised pretraining of the base credibility transformer."""
    cfg = config.phase1
    t0 = time.perf_counter()
    if bundle is None:
        bundle = ModelBundle(config, train_ds.cat_cardinalities(),
                             train_ds.cont.shape[1], seed=config.seed)
    train_idx, val_idx = split_validation(train_ds.n, config.seed, config.val_fraction)
    fit, val = train_ds.subset(train_idx), train_ds.subset(val_idx)
    bundle.decoder.set_output_bias(np.log(fit.y.sum() / fit.v.sum()))
    bundle.apply_freeze(set())

    report = TrainingReport(phase=1, param_count=bundle.param_count(),
                            hyperparameters=_phase_hyper(cfg, 1))
    opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay, beta1=cfg.beta1,
                beta2=cfg.beta2, eps=cfg.eps)
    stopper = EarlyStopping(cfg.patience)
    rng = stream_rng(config.seed, _STREAM_TRAIN1)

    initial_val = validation_deviance_plain(bundle, val)
    report.initial_val_loss = initial_val
    stopper.observe(0, initial_val, bundle)
    params = bundle.trainable_params()

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(fit.n)
        losses = []
        for step, lo in enumerate(range(0, fit.n, cfg.batch_size)):
            rows = order[lo:lo + cfg.batch_size]
            opt.zero_grad(params)
            with Tape() as tape:
                c = bundle.encoder.cls_embedding(fit.cat[rows], fit.cont[rows],
                                                 training=True, rng=rng)
                mu = bundle.decoder.mu_tensor(c, fit.v[rows])
                loss = mean_deviance_loss(mu, fit.y[rows])
                _check_finite(loss.item(), 1, epoch, step)
                backward(tape, loss)
            opt.step(params)
            losses.append(loss.item())
        val_loss = validation_deviance_plain(bundle, val)
        report.train_losses.append(100.0 * float(np.mean(losses)))
        report.val_losses.append(val_loss)
        report.epochs_run = epoch
        logger.info("phase 1 epoch %d: train %.4f, val %.4f", epoch,
                    report.train_losses[-1], val_loss)
        if stopper.observe(epoch, val_loss, bundle):
            break

    stopper.restore_best(bundle)
    report.best_epoch = stopper.best_epoch
    report.best_val_loss = stopper.best_loss
    report.wall_time_s = time.perf_counter() - t0
    bundle.phase = 1
    return bundle, report


def _icl_phase(bundle: ModelBundle, train_ds: EncodedDataset, config: RunConfig,
               phase: int) -> tuple[ModelBundle, TrainingReport]:
    cfg = config.phase2 if phase == 2 else config.phase3
    t0 = time.perf_counter()
    train_idx, val_idx = split_validation(train_ds.n, config.seed, config.val_fraction)
    pool, val = train_ds.subset(train_idx), train_ds.subset(val_idx)

    if phase == 2:
        if bundle.decorator is None:
            bundle.insert_icl_components()
        bundle.apply_freeze({"decoder"})
        decoder_before = bundle.group_bytes("decoder")
    else:
        if bundle.decorator is None:
            raise ContractError("phase 3 needs the in-context components from phase 2")
        bundle.apply_freeze(set())
        decoder_before = None

    report = TrainingReport(phase=phase, param_count=bundle.param_count(),
                            hyperparameters=_phase_hyper(cfg, phase))
    opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay, beta1=cfg.beta1,
                beta2=cfg.beta2, eps=cfg.eps)
    stopper = EarlyStopping(cfg.patience)
    rng = stream_rng(config.seed, _STREAM_TRAIN2 if phase == 2 else _STREAM_TRAIN3)

    initial_val = validation_deviance_icl(bundle, val, pool, cfg)
    report.initial_val_loss = initial_val
    stopper.observe(0, initial_val, bundle)
    params = bundle.trainable_params()
    m = cfg.chunk_size

    def assert_decoder_frozen():
        if decoder_before is not None and bundle.group_bytes("decoder") != decoder_before:
            raise FreezeViolationError("decoder parameters changed during phase 2")

    for epoch in range(1, cfg.epochs + 1):
        pool_embs = bundle.embed_eval(pool)
        index = build_index(pool_embs, np.arange(pool.n))
        order = rng.permutation(pool.n)
        losses = []
        for step, lo in enumerate(range(0, pool.n, m)):
            chunk = order[lo:lo + m]
            context_size = min(cfg.context_size, pool.n - len(chunk))
            asm = assemble_context(index, pool_embs[chunk], k=cfg.k_neighbors,
                                   c=context_size, exclude_ids=chunk)
            opt.zero_grad(params)
            with Tape() as tape:
                mu, batch, _, _ = bundle.forward_icl(pool, asm.selected_ids, pool, chunk,
                                                     training=True, rng=rng)
                y_loss = np.concatenate([pool.y[asm.selected_ids], pool.y[chunk]])
                loss = icl_loss_tensor(mu, y_loss, batch.v, batch.is_target)
                _check_finite(loss.item(), phase, epoch, step)
                backward(tape, loss)
            opt.step(params)
            losses.append(loss.item())
        assert_decoder_frozen()
        val_loss = validation_deviance_icl(bundle, val, pool, cfg)
        report.train_losses.append(100.0 * float(np.mean(losses)))
        report.val_losses.append(val_loss)
        report.epochs_run = epoch
        logger.info("phase %d epoch %d: train %.4f, val %.4f", phase, epoch,
                    report.train_losses[-1], val_loss)
        if stopper.observe(epoch, val_loss, bundle):
            break

    stopper.restore_best(bundle)
    assert_decoder_frozen()
    report.best_epoch = stopper.best_epoch
    report.best_val_loss = stopper.best_loss
    report.wall_time_s = time.perf_counter() - t0
    bundle.phase = phase
    return bundle, report


def phase2_train(bundle: ModelBundle, train_ds: EncodedDataset,
                 config: RunConfig) -> tuple[ModelBundle, TrainingReport]:
    """In-context fine-tuning with the decoder frozen."""
    return _icl_phase(bundle, train_ds, config, phase=2)


def phase3_finetune(bundle: ModelBundle, train_ds: EncodedDataset,
                    config: RunConfig) -> tuple[ModelBundle, TrainingReport]:
    """Joint fine-tuning of the entire architecture at a small learning rate."""
    return _icl_phase(bundle, train_ds, config, phase=3)


def predict(bundle: ModelBundle, target_ds: EncodedDataset, mode: str = "plain",
            pool: EncodedDataset | None = None,
            phase_cfg: PhaseConfig | None = None) -> np.ndarray:
    if mode == "plain":
        return bundle.predict_plain(target_ds)
    if mode == "icl":
        if pool is None:
            raise ConfigError("icl prediction needs a training pool for retrieval")
        cfg = phase_cfg or bundle.config.phase2
        return bundle.icl_predict(target_ds, pool, cfg, exclude_self=target_ds is pool)
    raise ConfigError(f"unknown prediction mode {mode!r}")


def ensemble_predict(bundles: list, target_ds: EncodedDataset, mode: str = "plain",
                     pool: EncodedDataset | None = None,
                     phase_cfg: PhaseConfig | None = None) -> np.ndarray:
    """Arithmetic mean of the member predictions, row by row."""
    if not bundles:
        raise ContractError("ensemble needs at least one bundle")
    preds = [predict(b, target_ds, mode, pool, phase_cfg) for b in bundles]
    return np.mean(preds, axis=0)


def evaluate(bundle_or_bundles, train_ds: EncodedDataset, test_ds: EncodedDataset,
             mode: str = "plain", phase_cfg: PhaseConfig | None = None) -> dict:
    """In-sample and out-of-sample deviance, reported in 1e-2 units."""
    bundles = bundle_or_bundles if isinstance(bundle_or_bundles, list) else [bundle_or_bundles]
    mu_in = ensemble_predict(bundles, train_ds, mode, pool=train_ds, phase_cfg=phase_cfg)
    mu_out = ensemble_predict(bundles, test_ds, mode, pool=train_ds, phase_cfg=phase_cfg)
    return {
        "in_sample": 100.0 * poisson_deviance(train_ds.y, mu_in),
        "out_of_sample": 100.0 * poisson_deviance(test_ds.y, mu_out),
    }


def evaluate_null(train_ds: EncodedDataset, test_ds: EncodedDataset) -> dict:
    """Intercept-only baseline deviances in 1e-2 units."""
    null = NullModel.fit(train_ds.y, train_ds.v)
    return {
        "in_sample": 100.0 * poisson_deviance(train_ds.y, null.predict(train_ds.v).mu),
        "out_of_sample": 100.0 * poisson_deviance(test_ds.y, null.predict(test_ds.v).mu),
        "log_rate": null.log_rate,
    }
