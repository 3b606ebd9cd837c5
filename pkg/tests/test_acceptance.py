"""Acceptance suite: one test per criterion, one printed line each at session end.

Criteria 1-3 reproduce published figures of the cleaned French MTPL dataset
and therefore need the real data file. Point ICLCT_MTPL_CSV at it (or place
it at data/mtpl_cleaned.csv); without it those tests skip with an explicit
reason. Everything else runs self-contained on seeded synthetic portfolios.
"""

import copy
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import make_encoded, small_config
from helpers import brute_force_topk, finite_difference_grad, rel_err

from iclct import autodiff as ad
from iclct import data as D
from iclct.analysis import (
    compute_stage_tokens,
    decile_probe_indices,
    fit_pca,
    pca_trajectories,
    verify_credibility,
)
from iclct.autodiff import Tape, Tensor, backward
from iclct.cli import main
from iclct.config import ModelConfig, PhaseConfig, RunConfig, save_config
from iclct.decoder import icl_loss_tensor, poisson_deviance
from iclct.retrieval import assemble_context, build_index, knn
from iclct.training import (
    ModelBundle,
    deterministic_guard,
    evaluate,
    evaluate_null,
    phase1_train,
    phase2_train,
)

MTPL_ENV = "ICLCT_MTPL_CSV"


def mtpl_path():
    candidate = os.environ.get(MTPL_ENV, str(Path(__file__).parent.parent / "data" / "mtpl_cleaned.csv"))
    return candidate if Path(candidate).exists() else None


needs_mtpl = pytest.mark.skipif(
    mtpl_path() is None,
    reason=f"cleaned MTPL dataset not present (set {MTPL_ENV} or add data/mtpl_cleaned.csv)",
)


@pytest.fixture(scope="module")
def mtpl_table():
    table, _ = D.load_csv(mtpl_path())
    return table


# -- published reference figures (cleaned MTPL data) -------------------------

NULL_IN_SAMPLE = 25.213
NULL_OUT_OF_SAMPLE = 25.445

ZS_TRAIN_POLICIES = 601_781
ZS_TRAIN_CLAIMS = 24_006
ZS_TRAIN_RELABELED = 165_200
ZS_TEST_POLICIES = 76_226
ZS_TEST_CLAIMS = 2_377
ZS_TEST_EXPOSURE = 34_900
ZS_TRAIN_FREQUENCY = 0.0742
ZS_TEST_FREQUENCY = 0.0681

REGIONAL_DEVIANCES = {
    "R43": 0.215, "R21": 0.179, "R42": 0.273, "R94": 0.210, "R83": 0.187,
    "R74": 0.268, "R23": 0.178, "R22": 0.246, "R26": 0.219, "R25": 0.263,
    "R73": 0.158, "R41": 0.241, "R54": 0.271, "R31": 0.227, "R72": 0.222,
    "R91": 0.198, "R52": 0.263, "R53": 0.282, "R11": 0.238, "R93": 0.240,
    "R82": 0.300, "R24": 0.266,
}
WEIGHTED_DEVIANCES = {
    "whole_portfolio": 0.255,
    "test": 0.216,
    "train_unseen": 0.238,
    "train_region_provided": 0.267,
}


@needs_mtpl
def test_criterion_01_null_model_reproduction(mtpl_table):
    t0 = time.perf_counter()
    train_t, test_t, _ = D.standard_split(mtpl_table)
    vocab = D.VocabularyMap.fit(train_t)
    stats = D.TrainStats.fit(train_t)
    scores = evaluate_null(D.encode(train_t, vocab, stats), D.encode(test_t, vocab, stats))
    elapsed = time.perf_counter() - t0
    assert scores["in_sample"] == pytest.approx(NULL_IN_SAMPLE, abs=0.005)
    assert scores["out_of_sample"] == pytest.approx(NULL_OUT_OF_SAMPLE, abs=0.005)
    assert elapsed < 30.0


@needs_mtpl
def test_criterion_02_zero_shot_split_reproduction(mtpl_table):
    train, test, rep = D.zero_shot_split(mtpl_table)
    assert rep.train_policies == ZS_TRAIN_POLICIES
    assert rep.train_claims == ZS_TRAIN_CLAIMS
    assert rep.train_relabeled == ZS_TRAIN_RELABELED
    assert rep.test_policies == ZS_TEST_POLICIES
    assert rep.test_claims == ZS_TEST_CLAIMS
    assert rep.test_exposure == pytest.approx(ZS_TEST_EXPOSURE, abs=1.0)
    assert rep.frequency("train") == pytest.approx(ZS_TRAIN_FREQUENCY, abs=1e-4)
    assert rep.frequency("test") == pytest.approx(ZS_TEST_FREQUENCY, abs=1e-4)
    assert np.all(test.col("Region") == D.UNSEEN)


@needs_mtpl
def test_criterion_03_regional_tables(mtpl_table):
    t0 = time.perf_counter()
    rows = D.regional_summary(mtpl_table)
    by_region = {r.region: r for r in rows}
    for region, want in REGIONAL_DEVIANCES.items():
        assert by_region[region].deviance == pytest.approx(want, abs=0.001), region
    agg = D.weighted_regional_deviances(rows)
    for key, want in WEIGHTED_DEVIANCES.items():
        assert agg[key] == pytest.approx(want, abs=0.001), key
    assert time.perf_counter() - t0 < 60.0


def _random_icl_bundle(ds, seed, dim=8, icl_layers=2, variant="nonlinear"):
    model = ModelConfig(dim=dim, heads=2, encoder_layers=1, icl_layers=icl_layers,
                        icl_variant=variant, decorator_hidden=8, decoder_hidden=8)
    cfg = RunConfig(model=model, seed=seed)
    bundle = ModelBundle(cfg, ds.cat_cardinalities(), ds.cont.shape[1], seed=seed)
    bundle.insert_icl_components()
    rng = np.random.default_rng(seed + 777)
    for layer in bundle.icl_layers:
        layer.wv.w.data = rng.normal(size=layer.wv.w.data.shape) * 0.4
        layer.ffn2.layers[-1].w.data = rng.normal(size=layer.ffn2.layers[-1].w.data.shape) * 0.1
        layer.ln1.strength.data = np.asarray(0.6)
        layer.ln2.strength.data = np.asarray(0.6)
    return bundle


def test_criterion_04_credibility_decomposition_suite():
    ds = make_encoded(n=300, seed=41)
    for seed in range(200):
        rng = np.random.default_rng(seed)
        bundle = _random_icl_bundle(ds, seed)
        targets = rng.choice(ds.n, size=4, replace=False)
        ctx = rng.choice(np.setdiff1d(np.arange(ds.n), targets), size=16, replace=False)
        check = verify_credibility(bundle, ds, ctx, targets)  # raises on failure
        assert check.ok


def test_criterion_05_no_target_leakage():
    ds = make_encoded(n=400, seed=42)
    bundle = None
    for trial in range(100):
        if trial % 20 == 0:
            bundle = _random_icl_bundle(ds, 9000 + trial)
        rng = np.random.default_rng(trial)
        targets = rng.choice(ds.n, size=5, replace=False)
        ctx = rng.choice(np.setdiff1d(np.arange(ds.n), targets), size=24, replace=False)
        mu1, _, _, _ = bundle.forward_icl(ds, ctx, ds, targets, training=False, rng=None)

        ds2 = copy.deepcopy(ds)
        victim = targets[rng.integers(len(targets))]
        ds2.cont[victim] += rng.normal(size=ds2.cont.shape[1])
        ds2.cat[victim, 0] = (ds2.cat[victim, 0] + 1) % ds2.cat_cardinalities()[0]
        ds2.y[victim] += 3.0
        ds2.v[victim] *= 2.0
        mu2, batch, _, _ = bundle.forward_icl(ds2, ctx, ds2, targets, training=False, rng=None)

        others = np.flatnonzero(targets != victim)
        t0 = batch.n_context
        assert np.array_equal(mu1.data[t0 + others], mu2.data[t0 + others])


def test_criterion_06_linearized_vs_nonlinear_traces():
    ds = make_encoded(n=200, seed=43)
    ctx, targets = np.arange(40), np.arange(40, 50)
    perturbed = copy.deepcopy(ds)
    perturbed.y[ctx] = perturbed.y[ctx] + 2.0

    linear = _random_icl_bundle(ds, 7, icl_layers=1, variant="linearized")
    _, _, _, tr1 = linear.forward_icl(ds, ctx, ds, targets, training=False, rng=None)
    _, _, _, tr2 = linear.forward_icl(perturbed, ctx, perturbed, targets, training=False, rng=None)
    assert tr1[0].a.tobytes() == tr2[0].a.tobytes()

    nonlinear = _random_icl_bundle(ds, 7, icl_layers=1, variant="nonlinear")
    _, _, _, tr3 = nonlinear.forward_icl(ds, ctx, ds, targets, training=False, rng=None)
    _, _, _, tr4 = nonlinear.forward_icl(perturbed, ctx, perturbed, targets, training=False, rng=None)
    assert tr3[0].a.tobytes() != tr4[0].a.tobytes()


def test_criterion_07_gradient_correctness():
    # primitives, spot-checked against central differences
    rng = np.random.default_rng(11)
    x0 = rng.normal(size=(3, 4))
    other = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 4))
    mask = np.zeros((3, 4), dtype=bool)
    mask[1, 2] = True
    gamma, beta = rng.normal(size=4), rng.normal(size=4)
    cases = [
        lambda x: ad.tsum(ad.mul(ad.matmul(x, Tensor(w)), Tensor(other @ np.eye(4)))),
        lambda x: ad.tsum(ad.mul(ad.add(x, Tensor(other)), ad.sub(x, Tensor(other)))),
        lambda x: ad.tsum(ad.div(Tensor(other), ad.add(ad.mul(x, x), 1.0))),
        lambda x: ad.tsum(ad.exp(ad.mul(x, 0.3))),
        lambda x: ad.tsum(ad.log(ad.add(ad.mul(x, x), 0.5))),
        lambda x: ad.tsum(ad.gelu(x)),
        lambda x: ad.tsum(ad.sigmoid(x)),
        lambda x: ad.tsum(ad.softplus(x)),
        lambda x: ad.tsum(ad.mul(ad.masked_softmax(x, mask), Tensor(other))),
        lambda x: ad.tsum(ad.mul(ad.layer_norm(x, Tensor(gamma), Tensor(beta)), Tensor(other))),
        lambda x: ad.tmean(ad.mul(ad.broadcast_to(ad.reshape(ad.tsum(x, axis=0), (1, 4)), (3, 4)), x)),
    ]
    for i, fn in enumerate(cases):
        def numeric(a, fn=fn):
            return float(fn(Tensor(np.asarray(a))).data)

        x = Tensor(x0.copy(), requires_grad=True)
        with Tape() as tape:
            backward(tape, fn(x))
        assert rel_err(x.grad, finite_difference_grad(numeric, x0)) <= 1e-4, f"case {i}"

    # end-to-end phase-2 loss (dim 8, 8 context + 4 target rows)
    ds = make_encoded(n=60, seed=44)
    bundle = _random_icl_bundle(ds, 12, dim=8)
    bundle.apply_freeze({"decoder"})
    ctx, targets = np.arange(8), np.arange(8, 12)
    y_loss = np.concatenate([ds.y[ctx], ds.y[targets]])

    def loss_fn():
        mu, batch, _, _ = bundle.forward_icl(ds, ctx, ds, targets, training=False, rng=None)
        return icl_loss_tensor(mu, y_loss, batch.v, batch.is_target)

    params = bundle.trainable_params()
    with Tape() as tape:
        backward(tape, loss_fn())
    grads = {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
             for n, p in params.items()}

    rng = np.random.default_rng(13)
    checked = 0
    h = 1e-5
    for name, p in params.items():
        flat = p.data.reshape(-1)
        for k in rng.choice(flat.size, size=min(2, flat.size), replace=False):
            orig = flat[k]
            flat[k] = orig + h
            up = loss_fn().item()
            flat[k] = orig - h
            down = loss_fn().item()
            flat[k] = orig
            want = (up - down) / (2 * h)
            got = grads[name].reshape(-1)[k]
            denom = max(abs(want), abs(got), 1e-6)
            assert abs(want - got) / denom <= 1e-4, f"{name}[{k}]: {got} vs {want}"
            checked += 1
    assert checked >= 40


def test_criterion_08_freeze_contract_and_identity_start():
    with deterministic_guard():
        ds = make_encoded(n=5000, seed=45)
        model = ModelConfig(dim=16, heads=2, encoder_layers=1, icl_layers=2,
                            decorator_hidden=8, decoder_hidden=16)
        cfg = RunConfig(
            model=model,
            phase1=PhaseConfig(lr=1e-3, epochs=3, patience=3, batch_size=512),
            phase2=PhaseConfig(lr=3e-4, epochs=1, patience=2, context_size=200,
                               chunk_size=100, k_neighbors=16),
            seed=45,
        )
        bundle, rep1 = phase1_train(ds, cfg)
        decoder_before = bundle.group_bytes("decoder")
        bundle, rep2 = phase2_train(bundle, ds, cfg)
        assert bundle.group_bytes("decoder") == decoder_before
        assert rep2.initial_val_loss == pytest.approx(rep1.best_val_loss, abs=1e-9)


def test_criterion_09_retrieval_matches_brute_force():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        vecs = rng.normal(size=(1000, 8))
        ids = rng.permutation(1000)
        index = build_index(vecs, ids)
        for _ in range(3):
            q = rng.normal(size=8)
            k = int(rng.integers(1, 80))
            got = knn(index, q, k)
            want = brute_force_topk(index.vectors, ids, q / np.linalg.norm(q), k)
            assert [g[0] for g in got] == [w[0] for w in want]
        targets = rng.normal(size=(5, 8))
        asm = assemble_context(index, targets, k=16, c=40)
        pool = {}
        for t in targets:
            for cid, sim in brute_force_topk(index.vectors, ids, t / np.linalg.norm(t), 16):
                pool[cid] = max(pool.get(cid, -np.inf), sim)
        assert asm.selected_ids.tolist() == sorted(pool, key=lambda j: (-pool[j], j))[:40]

    # tie rule on constructed duplicates
    rng = np.random.default_rng(123)
    base = rng.normal(size=8)
    vecs = rng.normal(size=(20, 8))
    for dup in (17, 4, 9):
        vecs[dup] = base
    index = build_index(vecs, np.arange(20))
    assert [h[0] for h in knn(index, base, 3)] == [4, 9, 17]


def test_criterion_10_desk_scale_learning():
    t0 = time.perf_counter()
    with deterministic_guard():
        data_file = mtpl_path()
        if data_file is not None:
            table, _ = D.load_csv(data_file)
            train_t, test_t, _ = D.standard_split(table)
            sub = np.random.default_rng(46).choice(train_t.n, size=50_000, replace=False)
            train_t = train_t.subset(np.sort(sub))
        else:
            train_t = D.synthetic_portfolio(50_000, seed=46)
            test_t = D.synthetic_portfolio(10_000, seed=47)
        vocab = D.VocabularyMap.fit(train_t)
        stats = D.TrainStats.fit(train_t)
        train = D.encode(train_t, vocab, stats)
        test = D.encode(test_t, vocab, stats)

        model = ModelConfig(dim=16, heads=4, encoder_layers=1, icl_layers=2,
                            decorator_hidden=8, decoder_hidden=16)
        cfg = RunConfig(
            model=model,
            phase1=PhaseConfig(lr=1e-3, epochs=12, patience=5, batch_size=1024),
            phase2=PhaseConfig(lr=3e-4, epochs=2, patience=2, context_size=1000,
                               chunk_size=200, k_neighbors=64),
            seed=46,
        )
        null = evaluate_null(train, test)
        bundle, rep1 = phase1_train(train, cfg)
        plain = evaluate(bundle, train, test, mode="plain")
        bundle, rep2 = phase2_train(bundle, train, cfg)
        icl = evaluate(bundle, train, test, mode="icl", phase_cfg=cfg.phase2)
    elapsed = time.perf_counter() - t0

    print(f"\n  null OOS {null['out_of_sample']:.3f} | phase1 OOS {plain['out_of_sample']:.3f} "
          f"| phase2 ICL OOS {icl['out_of_sample']:.3f} | {elapsed:.0f}s")
    assert plain["out_of_sample"] <= 0.98 * null["out_of_sample"]
    assert icl["out_of_sample"] <= 1.01 * plain["out_of_sample"]
    assert elapsed < 1800.0


def test_criterion_11_pca_instrument():
    ds = make_encoded(n=400, seed=48)
    test_ds = make_encoded(n=150, seed=49)
    cfg = small_config(seed=48)
    cfg.phase1.epochs = 1
    cfg.phase2.epochs = 1
    cfg.phase3.epochs = 1
    b1, _ = phase1_train(ds, cfg)
    b2, _ = phase2_train(copy.deepcopy(b1), ds, cfg)
    from iclct.training import phase3_finetune

    b3, _ = phase3_finetune(copy.deepcopy(b2), ds, cfg)

    base_tokens = b1.embed_eval(test_ds)
    pca = fit_pca(base_tokens)
    gram = pca.components.T @ pca.components
    assert np.max(np.abs(gram - np.eye(cfg.model.dim))) <= 1e-8
    assert np.all(np.diff(pca.explained_variance) <= 1e-12)

    probes = decile_probe_indices(b1.predict_plain(test_ds) / test_ds.v, 10)
    probe_ds = test_ds.subset(probes)
    stages = compute_stage_tokens(probe_ds, ds, b2, b3, phase1_bundle=b1,
                                  phase_cfg=cfg.phase2)
    six = {s: t for s, t in stages.items() if s != "ct-base"}
    assert len(six) == 6
    _, projections = pca_trajectories(base_tokens, six, k=2)
    for stage, proj in projections.items():
        assert proj.shape == (10, 2)
        assert np.all(np.isfinite(proj))


def test_criterion_12_end_to_end_determinism(tmp_path):
    table = D.synthetic_portfolio(900, seed=50)
    split = np.where(np.arange(table.n) % 6 == 0, "test", "train")
    csv_path = tmp_path / "portfolio.csv"
    D.write_csv(table, csv_path, split=split)
    cfg = small_config(seed=50)
    cfg.phase1.epochs = 2
    cfg.phase2.epochs = 1
    cfg_path = tmp_path / "config.json"
    save_config(cfg, cfg_path)

    outs = []
    for run in ("run_a", "run_b"):
        out = tmp_path / run
        assert main(["prepare", "--data", str(csv_path), "--out", str(out)]) == 0
        data = str(out / "dataset.iclct")
        assert main(["train", "--phase", "1", "--data", data, "--config", str(cfg_path),
                     "--deterministic", "--out", str(out / "p1")]) == 0
        assert main(["train", "--phase", "2", "--data", data, "--config", str(cfg_path),
                     "--deterministic", "--model", str(out / "p1" / "phase1.iclct"),
                     "--out", str(out / "p2")]) == 0
        outs.append(out)

    a, b = outs
    for rel in ("dataset.iclct",):
        assert (a / rel).read_bytes() == (b / rel).read_bytes()
    for rel in ("p1/phase1.iclct", "p1/metrics.csv", "p2/phase2.iclct", "p2/metrics.csv"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
