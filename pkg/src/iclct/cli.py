"""Command-line driver: prepare data, train phases, evaluate, analyze, zero-shot.

Exit codes: 0 success, 1 runtime failure, 2 usage error. All artifacts land
under --out: report.txt (human readable), metrics.csv (key,value rows),
predictions.csv, attention.csv, pca_projections.csv, neighbors.csv. CSV
floats use 6 significant digits so outputs are byte-stable for fixed
inputs and seeds.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as D
from .analysis import (
    NEIGHBOR_COLUMNS,
    attention_csv_rows,
    compute_stage_tokens,
    decile_probe_indices,
    neighbor_report,
    pca_trajectories,
    verify_credibility,
    write_csv_rows,
)
from .checkpoint import load_container, save_container
from .config import RunConfig, load_config, save_config
from .data import EncodedDataset, TrainStats, VocabularyMap
from .errors import ConfigError, ContractError, IclctError
from .retrieval import assemble_context, build_index, encoder_hash, save_neighbor_cache
from .training import (
    ModelBundle,
    deterministic_guard,
    ensemble_predict,
    evaluate,
    evaluate_null,
    phase1_train,
    phase2_train,
    phase3_finetune,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# dataset cache (checkpoint container format)
# ---------------------------------------------------------------------------

def save_dataset_cache(path, train: EncodedDataset, test: EncodedDataset,
                       split_kind: str, extra_meta: dict | None = None,
                       train_unseen: np.ndarray | None = None) -> None:
    metadata = {
        "format": "dataset-cache",
        "split": split_kind,
        "vocab": train.vocab.to_json(),
        "stats": train.stats.to_json(),
    }
    metadata.update(extra_meta or {})
    tensors = {}
    for tag, ds in (("train", train), ("test", test)):
        tensors[f"{tag}.ids"] = ds.ids.astype(np.float64)
        tensors[f"{tag}.cat"] = ds.cat.astype(np.float64)
        tensors[f"{tag}.cont"] = ds.cont
        tensors[f"{tag}.y"] = ds.y
        tensors[f"{tag}.v"] = ds.v
    if train_unseen is not None:
        tensors["train.unseen"] = train_unseen.astype(np.float64)
    save_container(path, metadata, tensors)


def load_dataset_cache(path):
    metadata, tensors = load_container(path)
    if metadata.get("format") != "dataset-cache":
        raise ContractError(f"{path} is not a dataset cache")
    vocab = VocabularyMap.from_json(metadata["vocab"])
    stats = TrainStats.from_json(metadata["stats"])

    def dataset(tag):
        return EncodedDataset(
            ids=tensors[f"{tag}.ids"].astype(np.int64),
            cat=tensors[f"{tag}.cat"].astype(np.int64),
            cont=tensors[f"{tag}.cont"],
            y=tensors[f"{tag}.y"],
            v=tensors[f"{tag}.v"],
            vocab=vocab,
            stats=stats,
        )

    unseen = tensors.get("train.unseen")
    return dataset("train"), dataset("test"), metadata, (
        unseen.astype(bool) if unseen is not None else None)


def _load_encoded(path):
    """Accept either a prepared cache or a raw CSV (prepared on the fly)."""
    path = str(path)
    if path.endswith(".csv"):
        table, _ = D.load_csv(path)
        train_t, test_t, _ = D.standard_split(table)
        vocab = VocabularyMap.fit(train_t)
        stats = TrainStats.fit(train_t)
        return D.encode(train_t, vocab, stats), D.encode(test_t, vocab, stats), {}, None
    return load_dataset_cache(path)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_metrics(path, rows) -> None:
    write_csv_rows(path, ["key", "value"], rows)


def write_report(path, lines) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.deterministic:
        cfg.deterministic = True
    return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_prepare(args) -> int:
    out = _outdir(args)
    table, split_col = D.load_csv(args.data)
    lines = [f"loaded {table.n} policies from {args.data}"]
    if args.split == "zero-shot":
        train_t, test_t, rep = D.zero_shot_split(table)
        lines += [
            "zero-shot split:",
            f"  train: {rep.train_policies} policies, {rep.train_claims:.0f} claims, "
            f"{rep.train_exposure:.0f} exposure, frequency {100 * rep.frequency('train'):.2f}%",
            f"  train rows relabeled unseen: {rep.train_relabeled}",
            f"  test:  {rep.test_policies} policies, {rep.test_claims:.0f} claims, "
            f"{rep.test_exposure:.0f} exposure, frequency {100 * rep.frequency('test'):.2f}%",
        ]
        train_unseen = train_t.col("Region") == D.UNSEEN
    else:
        train_t, test_t, rep = D.standard_split(table)
        lines += [
            f"standard split ({rep.source}):",
            f"  train: {rep.train_policies} policies, {rep.train_claims:.0f} claims, "
            f"{rep.train_exposure:.0f} exposure, frequency {100 * rep.frequency('train'):.2f}%",
            f"  test:  {rep.test_policies} policies, {rep.test_claims:.0f} claims, "
            f"{rep.test_exposure:.0f} exposure, frequency {100 * rep.frequency('test'):.2f}%",
        ]
        lines += [f"  warning: {w}" for w in rep.warnings]
        train_unseen = None
    vocab = VocabularyMap.fit(train_t)
    stats = TrainStats.fit(train_t)
    train = D.encode(train_t, vocab, stats)
    test = D.encode(test_t, vocab, stats)
    cache = out / "dataset.iclct"
    save_dataset_cache(cache, train, test, args.split, train_unseen=train_unseen)
    lines.append(f"encoded dataset cache written to {cache}")
    write_report(out / "report.txt", lines)
    print("\n".join(lines))
    return 0


def cmd_train(args) -> int:
    out = _outdir(args)
    cfg = _config_from_args(args)
    train, test, _, _ = _load_encoded(args.data)
    with deterministic_guard(cfg.deterministic):
        if args.phase == 1:
            bundle, report = phase1_train(train, cfg)
        else:
            if not args.model:
                raise ConfigError(f"phase {args.phase} needs --model (previous phase bundle)")
            bundle = ModelBundle.load(args.model)
            if cfg.model.dim != bundle.config.model.dim:
                raise ConfigError(
                    f"config dim {cfg.model.dim} does not match the bundle's "
                    f"{bundle.config.model.dim}")
            bundle.config = cfg
            step = phase2_train if args.phase == 2 else phase3_finetune
            bundle, report = step(bundle, train, cfg)
        scores = evaluate(bundle, train, test,
                          mode="plain" if args.phase == 1 else "icl",
                          phase_cfg=cfg.phase2 if args.phase > 1 else None)
    report.in_sample = scores["in_sample"]
    report.out_of_sample = scores["out_of_sample"]
    bundle_path = out / f"phase{args.phase}.iclct"
    bundle.save(bundle_path)
    save_config(cfg, out / "config.json")
    write_metrics(out / "metrics.csv", report.metrics_rows())
    lines = [
        f"phase {args.phase} finished: {report.epochs_run} epochs, best epoch {report.best_epoch}",
        f"parameters: {report.param_count}",
        f"hyper-parameters: {json.dumps(report.hyperparameters, sort_keys=True)}",
        f"validation loss (1e-2): initial {report.initial_val_loss:.4f}, "
        f"best {report.best_val_loss:.4f}",
        f"in-sample deviance (1e-2): {report.in_sample:.3f}",
        f"out-of-sample deviance (1e-2): {report.out_of_sample:.3f}",
        f"wall time: {report.wall_time_s:.1f}s",
        f"bundle: {bundle_path}",
    ]
    write_report(out / "report.txt", lines)
    print("\n".join(lines))
    return 0


def cmd_evaluate(args) -> int:
    out = _outdir(args)
    train, test, _, train_unseen = _load_encoded(args.data)
    cfg = _config_from_args(args)
    with deterministic_guard(cfg.deterministic):
        if args.model == "null":
            scores = evaluate_null(train, test)
            label = "null model (intercept-only)"
        else:
            bundles = [ModelBundle.load(p) for p in ([args.model] + (args.ensemble or []))]
            scores = evaluate(bundles, train, test, mode=args.mode, phase_cfg=cfg.phase2)
            label = f"{args.mode} evaluation of {len(bundles)} bundle(s)"
    lines = [label,
             f"in-sample deviance (1e-2): {scores['in_sample']:.3f}",
             f"out-of-sample deviance (1e-2): {scores['out_of_sample']:.3f}"]
    rows = [("in_sample", scores["in_sample"]), ("out_of_sample", scores["out_of_sample"])]
    write_metrics(out / "metrics.csv", rows)
    write_report(out / "report.txt", lines)
    print("\n".join(lines))
    return 0


def cmd_predict(args) -> int:
    out = _outdir(args)
    train, test, _, _ = _load_encoded(args.data)
    cfg = _config_from_args(args)
    target = test if args.which == "test" else train
    with deterministic_guard(cfg.deterministic):
        bundles = [ModelBundle.load(p) for p in ([args.model] + (args.ensemble or []))]
        mu = ensemble_predict(bundles, target, mode=args.mode, pool=train,
                              phase_cfg=cfg.phase2)
    rows = [(int(i), v, y, m) for i, v, y, m in zip(target.ids, target.v, target.y, mu)]
    write_csv_rows(out / "predictions.csv", ["id", "exposure", "claims", "mu"], rows)
    print(f"wrote {len(rows)} predictions to {out / 'predictions.csv'}")
    return 0


def cmd_retrieve(args) -> int:
    out = _outdir(args)
    train, test, _, _ = _load_encoded(args.data)
    cfg = _config_from_args(args)
    bundle = ModelBundle.load(args.model)
    with deterministic_guard(cfg.deterministic):
        train_embs = bundle.embed_eval(train)
        index = build_index(train_embs, np.arange(train.n))
        test_embs = bundle.embed_eval(test)
        records = {}
        lines = []
        for lo in range(0, test.n, args.chunk_size):
            hi = min(lo + args.chunk_size, test.n)
            asm = assemble_context(index, test_embs[lo:hi], k=args.k, c=args.context_size)
            records[lo] = (asm.selected_ids, asm.selected_scores)
            lines.append(f"chunk [{lo}, {hi}): pool {asm.pool_size}, "
                         f"context {len(asm.selected_ids)}")
    fingerprint = encoder_hash({n: p.data for n, p in bundle.named_params().items()})
    cache_path = out / "neighbors.cache"
    save_neighbor_cache(cache_path, fingerprint, records)
    lines.append(f"neighbor cache written to {cache_path}")
    write_report(out / "report.txt", lines)
    print("\n".join(lines))
    return 0


def cmd_analyze(args) -> int:
    out = _outdir(args)
    cfg = _config_from_args(args)

    if args.what == "credibility":
        with deterministic_guard(cfg.deterministic):
            if args.model == "random":
                check = _random_credibility_check(cfg.seed)
            else:
                bundle = ModelBundle.load(args.model)
                train, _, _, _ = _load_encoded(args.data)
                rng = np.random.default_rng(cfg.seed)
                targets = rng.choice(train.n, size=min(8, train.n // 2), replace=False)
                rest = np.setdiff1d(np.arange(train.n), targets)
                ctx = rng.choice(rest, size=min(64, len(rest)), replace=False)
                check = verify_credibility(bundle, train, ctx, targets)
        lines = [
            "credibility structure checks",
            f"layers checked: {check.n_layers}, target rows: {check.n_target}",
            f"max decomposition residual: {check.max_decomposition_residual:.3e} (<= 1e-9)",
            f"max row-sum residual: {check.max_row_sum_residual:.3e} (<= 1e-12)",
            f"max weight recomputation residual: {check.max_weight_residual:.3e} (<= 1e-12)",
            f"target-target weights all exactly zero: {check.target_target_all_zero}",
            "all checks passed" if check.ok else "CHECKS FAILED",
        ]
        write_report(out / "report.txt", lines)
        print("\n".join(lines))
        return 0 if check.ok else 1

    train, test, _, _ = _load_encoded(args.data)
    bundle2 = ModelBundle.load(args.model)
    bundle3 = ModelBundle.load(args.model3) if args.model3 else None
    bundle1 = ModelBundle.load(args.model1) if args.model1 else None

    with deterministic_guard(cfg.deterministic):
        if args.what == "attention":
            m = min(bundle2.config.phase2.chunk_size, test.n)
            train_embs = bundle2.embed_eval(train)
            index = build_index(train_embs, np.arange(train.n))
            asm = assemble_context(index, bundle2.embed_eval(test.subset(np.arange(m))),
                                   k=bundle2.config.phase2.k_neighbors,
                                   c=bundle2.config.phase2.context_size)
            _, _, _, traces = bundle2.forward_icl(train, asm.selected_ids, test,
                                                  np.arange(m), training=False, rng=None)
            write_csv_rows(out / "attention.csv", ["i", "j", "layer", "weight"],
                           attention_csv_rows(traces))
            print(f"wrote attention weights for a {asm.selected_ids.size}+{m} row batch")
            return 0

        base_model = bundle1 or bundle2
        base_mu = base_model.predict_plain(test)
        probes = decile_probe_indices(base_mu / test.v, args.probes)
        probe_ds = test.subset(probes)
        stages = compute_stage_tokens(probe_ds, train, bundle2, bundle3,
                                      phase1_bundle=bundle1,
                                      untrained_bundle=_untrained_copy(bundle2) if args.what == "neighbors" else None,
                                      phase_cfg=cfg.phase2)

        if args.what == "pca":
            base_test_tokens = base_model.embed_eval(test)
            pca, projections = pca_trajectories(
                base_test_tokens,
                {s: t for s, t in stages.items() if s != "phase1-ct"},
                k=args.components,
            )
            rows = []
            for stage in sorted(projections):
                for p, idx in enumerate(probes):
                    rows.append((int(test.ids[idx]), stage,
                                 *projections[stage][p].tolist()))
            header = ["instance", "stage"] + [f"pc{i + 1}" for i in range(args.components)]
            write_csv_rows(out / "pca_projections.csv", header, rows)
            lines = ["pca of base-model test CLS tokens",
                     f"components: {args.components}",
                     "explained variance: "
                     + ", ".join(f"{v:.6g}" for v in pca.explained_variance)]
            write_report(out / "report.txt", lines)
            print("\n".join(lines))
            return 0

        # neighbors
        corpus_stages = compute_stage_tokens(
            train, train, bundle2, bundle3, phase1_bundle=bundle1,
            untrained_bundle=_untrained_copy(bundle2), phase_cfg=cfg.phase2,
            exclude_self=True)
        rows = []
        for p, idx in enumerate(probes):
            probe_tokens = {s: t[p] for s, t in stages.items()}
            for nr in neighbor_report(probe_tokens, corpus_stages, _decode_table(train),
                                      n_neighbors=args.neighbors, metric=args.metric):
                rows.append((int(test.ids[idx]), nr.stage, nr.rank, nr.distance,
                             *[nr.covariates[c] for c in NEIGHBOR_COLUMNS]))
        header = ["probe", "stage", "rank", "distance"] + list(NEIGHBOR_COLUMNS)
        write_csv_rows(out / "neighbors.csv", header, rows)
        print(f"wrote {len(rows)} neighbor rows ({args.metric} distance) "
              f"to {out / 'neighbors.csv'}")
        return 0


def _untrained_copy(bundle: ModelBundle) -> ModelBundle:
    return ModelBundle(bundle.config, bundle.cat_cardinalities, bundle.n_continuous,
                       seed=bundle.seed)


def _decode_table(ds: EncodedDataset):
    """Rebuild a covariate view of an encoded dataset for neighbor reports."""
    from .data import CAT_FEATURES, CONT_FEATURES, PolicyTable

    cols = {"IDpol": ds.ids, "ClaimNb": ds.y, "Exposure": ds.v}
    for j, f in enumerate(CAT_FEATURES):
        cols[f] = np.asarray([ds.vocab.level_of(f, i) for i in ds.cat[:, j]], dtype=str)
    for j, f in enumerate(CONT_FEATURES):
        x = ds.cont[:, j] * ds.stats.std[f] + ds.stats.mean[f]
        if f in D.LOG_TRANSFORMED:
            x = np.exp(x)
        cols[f] = np.round(x, 6)
    return PolicyTable(cols)


def _random_credibility_check(seed: int):
    """Credibility checks on a freshly initialized model and synthetic batch."""
    table = D.synthetic_portfolio(300, seed=seed)
    vocab = VocabularyMap.fit(table)
    stats = TrainStats.fit(table)
    ds = D.encode(table, vocab, stats)
    cfg = RunConfig(seed=seed)
    cfg.model.dim = 16
    cfg.model.heads = 2
    cfg.model.encoder_layers = 1
    bundle = ModelBundle(cfg, ds.cat_cardinalities(), ds.cont.shape[1], seed=seed)
    bundle.insert_icl_components()
    rng = np.random.default_rng(seed)
    # random (non-identity) attention stack so the checks are non-trivial
    for layer in bundle.icl_layers:
        layer.wv.w.data = rng.normal(size=layer.wv.w.data.shape) * 0.3
        layer.ln1.strength.data = np.asarray(0.5)
        layer.ln2.strength.data = np.asarray(0.5)
    targets = np.arange(8)
    ctx = np.arange(8, 72)
    return verify_credibility(bundle, ds, ctx, targets)


def cmd_zero_shot(args) -> int:
    out = _outdir(args)
    cfg = _config_from_args(args)
    table, _ = D.load_csv(args.data)
    train_t, test_t, rep = D.zero_shot_split(table)
    lines = [
        "zero-shot region split",
        f"  train: {rep.train_policies} policies, {rep.train_claims:.0f} claims, "
        f"exposure {rep.train_exposure:.0f}, frequency {100 * rep.frequency('train'):.2f}%",
        f"  train rows relabeled unseen: {rep.train_relabeled}",
        f"  test:  {rep.test_policies} policies, {rep.test_claims:.0f} claims, "
        f"exposure {rep.test_exposure:.0f}, frequency {100 * rep.frequency('test'):.2f}%",
    ]
    metrics = [
        ("train_policies", rep.train_policies),
        ("train_claims", rep.train_claims),
        ("train_exposure", rep.train_exposure),
        ("train_relabeled", rep.train_relabeled),
        ("test_policies", rep.test_policies),
        ("test_claims", rep.test_claims),
        ("test_exposure", rep.test_exposure),
    ]

    if args.stage in ("regional", "full"):
        rows = D.regional_summary(table)
        lines.append("")
        lines.append("region  claims  exposure  rate  deviance  unseen  set")
        for r in rows:
            lines.append(f"{r.region:>6}  {r.claims:6.0f}  {r.exposure:8.0f}  "
                         f"{r.rate:.2f}  {r.deviance:.3f}  {'yes' if r.unseen else 'no':>6}  {r.split}")
        agg = D.weighted_regional_deviances(rows)
        lines.append("")
        lines.append("exposure-weighted average deviances:")
        for key in ("whole_portfolio", "test", "train_unseen", "train_region_provided"):
            lines.append(f"  {key}: {agg[key]:.3f}")
            metrics.append((f"regional_{key}", agg[key]))

    if args.stage == "full":
        vocab = VocabularyMap.fit(train_t)
        stats = TrainStats.fit(train_t)
        train = D.encode(train_t, vocab, stats)
        test = D.encode(test_t, vocab, stats)
        unseen_mask = train_t.col("Region") == D.UNSEEN
        train_unseen = train.subset(np.flatnonzero(unseen_mask))

        def scoreboard(tag, mu_in, mu_out):
            from .decoder import poisson_deviance

            dev_in = 100.0 * poisson_deviance(train_unseen.y, mu_in)
            dev_out = 100.0 * poisson_deviance(test.y, mu_out)
            lines.append(f"  {tag}: in-sample (unseen) {dev_in:.3f}, out-of-sample {dev_out:.3f}")
            metrics.append((f"{tag}_in_sample_unseen", dev_in))
            metrics.append((f"{tag}_out_of_sample", dev_out))

        with deterministic_guard(cfg.deterministic):
            lines.append("")
            lines.append("zero-shot scoreboard (Poisson deviance, 1e-2 units):")
            from .decoder import NullModel

            null = NullModel.fit(train.y, train.v)
            scoreboard("null", null.predict(train_unseen.v).mu, null.predict(test.v).mu)

            bundle, _ = phase1_train(train, cfg)
            scoreboard("phase1", bundle.predict_plain(train_unseen),
                       bundle.predict_plain(test))
            bundle.save(out / "phase1.iclct")

            bundle, _ = phase2_train(bundle, train, cfg)
            scoreboard("phase2",
                       bundle.icl_predict(train_unseen, train, cfg.phase2),
                       bundle.icl_predict(test, train, cfg.phase2))
            bundle.save(out / "phase2.iclct")

            bundle, _ = phase3_finetune(bundle, train, cfg)
            scoreboard("phase3",
                       bundle.icl_predict(train_unseen, train, cfg.phase3),
                       bundle.icl_predict(test, train, cfg.phase3))
            bundle.save(out / "phase3.iclct")

    write_metrics(out / "metrics.csv", metrics)
    write_report(out / "report.txt", lines)
    print("\n".join(lines))
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded BLAS for bit-reproducible runs")
    common.add_argument("--data", help="dataset cache (or raw CSV)")
    common.add_argument("--out", default="out", help="output directory")

    parser = argparse.ArgumentParser(
        prog="iclct",
        description="In-context-learning enhanced credibility transformer "
                    "for claim frequency modeling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="ingest, encode and split a CSV")
    p.add_argument("--split", choices=["standard", "zero-shot"], default="standard")
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", parents=[common], help="run one training phase")
    p.add_argument("--phase", type=int, choices=[1, 2, 3], required=True)
    p.add_argument("--model", help="bundle from the previous phase (phases 2-3)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="deviance scoreboard")
    p.add_argument("--mode", choices=["plain", "icl"], default="plain")
    p.add_argument("--model", required=True, help="bundle path or 'null'")
    p.add_argument("--ensemble", nargs="*", help="additional bundles to average")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="write per-policy predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--ensemble", nargs="*")
    p.add_argument("--mode", choices=["plain", "icl"], default="plain")
    p.add_argument("--which", choices=["test", "train"], default="test")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("retrieve", parents=[common], help="build context assemblies")
    p.add_argument("--model", required=True)
    p.add_argument("--chunk-size", type=int, default=200)
    p.add_argument("--context-size", type=int, default=1000)
    p.add_argument("--k", type=int, default=64)
    p.set_defaults(fn=cmd_retrieve)

    p = sub.add_parser("analyze", parents=[common], help="model analysis instruments")
    p.add_argument("what", choices=["credibility", "pca", "neighbors", "attention"])
    p.add_argument("--model", required=True, help="phase-2 bundle, or 'random' for credibility")
    p.add_argument("--model1", help="phase-1 bundle (base stage)")
    p.add_argument("--model3", help="phase-3 bundle (post stages)")
    p.add_argument("--components", type=int, default=2)
    p.add_argument("--probes", type=int, default=10)
    p.add_argument("--neighbors", type=int, default=5)
    p.add_argument("--metric", choices=["euclidean", "cosine"], default="euclidean")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("zero-shot", parents=[common],
                       help="region-novelty experiment driver")
    p.add_argument("--stage", choices=["split-only", "regional", "full"], default="full")
    p.set_defaults(fn=cmd_zero_shot)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except IclctError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
