import numpy as np
import pytest

from iclct import data as D
from iclct.errors import ConfigError, ParseError, SchemaError


@pytest.fixture(scope="module")
def synth():
    return D.synthetic_portfolio(4000, seed=11)


def test_synthetic_portfolio_plausible(synth):
    s = D.summarize(synth)
    assert s["policies"] == 4000
    assert 0.04 < s["frequency"] < 0.25
    assert np.all(synth.col("Exposure") > 0)
    assert np.all(synth.col("DrivAge") >= 18)


def test_csv_round_trip(tmp_path, synth):
    path = tmp_path / "portfolio.csv"
    D.write_csv(synth, path)
    table, split_col = D.load_csv(path)
    assert split_col is None
    assert table.n == synth.n
    assert np.array_equal(table.col("ClaimNb"), synth.col("ClaimNb"))
    assert np.array_equal(table.col("Region"), synth.col("Region"))
    assert np.allclose(table.col("Density"), synth.col("Density"))


def test_empty_file_with_header(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text(",".join(D.REQUIRED_COLUMNS) + "\n")
    table, _ = D.load_csv(path)
    assert table.n == 0


def test_missing_column_is_schema_error(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("IDpol,ClaimNb\n1,0\n")
    with pytest.raises(SchemaError, match="Exposure"):
        D.load_csv(path)


def test_negative_claim_count_is_parse_error_with_line(tmp_path, synth):
    path = tmp_path / "neg.csv"
    bad = synth.subset(np.arange(3))
    bad.columns["ClaimNb"] = np.array([0.0, -1.0, 0.0])
    D.write_csv(bad, path)
    with pytest.raises(ParseError, match="line 3"):
        D.load_csv(path)


def test_split_column_detected_and_used(tmp_path, synth):
    path = tmp_path / "with_split.csv"
    split = np.where(np.arange(synth.n) % 10 == 0, "test", "train")
    D.write_csv(synth, path, split=split)
    table, split_col = D.load_csv(path)
    assert split_col == "split"
    train, test, rep = D.standard_split(table)
    assert rep.source == "column"
    assert test.n == (split == "test").sum()
    assert not set(train.col("IDpol")) & set(test.col("IDpol"))


def test_fallback_split_is_deterministic_and_disjoint(synth):
    t1, s1, rep1 = D.standard_split(synth)
    t2, s2, rep2 = D.standard_split(synth)
    assert rep1.source == "fallback"
    assert any("fallback" in w for w in rep1.warnings)
    assert np.array_equal(t1.col("IDpol"), t2.col("IDpol"))
    assert np.array_equal(s1.col("IDpol"), s2.col("IDpol"))
    assert t1.n + s1.n == synth.n
    assert not set(t1.col("IDpol")) & set(s1.col("IDpol"))


def test_vocabulary_round_trip_and_unseen_index(synth):
    vocab = D.VocabularyMap.fit(synth)
    again = D.VocabularyMap.from_json(vocab.to_json())
    for f in D.CAT_FEATURES:
        assert vocab.levels[f] == again.levels[f]
        assert vocab.unseen_index(f) == len(vocab.levels[f])
        # encode/decode identity on every observed level
        for i, level in enumerate(vocab.levels[f]):
            assert vocab.index_of(f, level) == i
            assert vocab.level_of(f, i) == level
    assert vocab.index_of("Region", "not-a-region") == vocab.unseen_index("Region")
    assert vocab.level_of("Region", vocab.unseen_index("Region")) == D.UNSEEN


def test_encoding_standardizes_training_columns(synth):
    vocab = D.VocabularyMap.fit(synth)
    stats = D.TrainStats.fit(synth)
    enc = D.encode(synth, vocab, stats)
    assert enc.cat.shape == (synth.n, 4)
    assert enc.cont.shape == (synth.n, 5)
    assert np.all(np.abs(enc.cont.mean(axis=0)) <= 1e-9)
    assert np.all(np.abs(enc.cont.std(axis=0) - 1.0) <= 1e-9)


def test_density_log_transform(synth):
    vocab = D.VocabularyMap.fit(synth)
    stats = D.TrainStats.fit(synth)
    enc = D.encode(synth, vocab, stats)
    j = D.CONT_FEATURES.index("Density")
    want = (np.log(100.0) - stats.mean["Density"]) / stats.std["Density"]
    probe = synth.subset(np.arange(1))
    probe.columns["Density"] = np.array([100.0])
    enc_probe = D.encode(probe, vocab, stats)
    assert enc_probe.cont[0, j] == pytest.approx(want, abs=1e-12)
    assert enc.cont[:, j] == pytest.approx(
        (np.log(synth.col("Density")) - stats.mean["Density"]) / stats.std["Density"]
    )


def test_unseen_level_maps_to_reserved_index(synth):
    vocab = D.VocabularyMap.fit(synth.subset(np.arange(100)))
    stats = D.TrainStats.fit(synth)
    enc = D.encode(synth, vocab, stats)
    j = D.CAT_FEATURES.index("Region")
    seen = set(vocab.levels["Region"])
    novel = ~np.isin(synth.col("Region"), list(seen))
    assert novel.any()
    assert np.all(enc.cat[novel, j] == vocab.unseen_index("Region"))


def test_zero_shot_split_construction(synth):
    train, test, rep = D.zero_shot_split(synth)
    # every test row is relabeled unseen, original labels preserved
    assert np.all(test.col("Region") == D.UNSEEN)
    assert set(test.col("Region_orig")) == set(D.ZERO_SHOT_TEST_REGIONS)
    relabeled = train.col("Region") == D.UNSEEN
    assert set(train.col("Region_orig")[relabeled]) == set(D.ZERO_SHOT_RELABEL_REGIONS)
    kept = train.col("Region") != D.UNSEEN
    assert np.array_equal(train.col("Region")[kept], train.col("Region_orig")[kept])
    assert rep.train_policies + rep.test_policies == synth.n
    assert rep.train_relabeled == int(relabeled.sum())


def test_zero_shot_split_deterministic(synth):
    t1, s1, _ = D.zero_shot_split(synth)
    t2, s2, _ = D.zero_shot_split(synth)
    assert np.array_equal(t1.col("IDpol"), t2.col("IDpol"))
    assert np.array_equal(s1.col("IDpol"), s2.col("IDpol"))


def test_zero_shot_split_unknown_region_is_config_error(synth):
    with pytest.raises(ConfigError):
        D.zero_shot_split(synth, test_regions=["R99"])


def test_regional_summary_zero_deviance_for_saturated_region():
    table = D.synthetic_portfolio(300, seed=3)
    # craft a region where every policy has mu = y by giving all rows the
    # same y/v ratio: y = v * rate with rate shared
    v = table.col("Exposure")
    y = np.zeros_like(v)
    y[:] = v * 0.2
    table.columns["ClaimNb"] = y
    table.columns["Region"] = np.asarray(["R11"] * table.n, dtype=str)
    rows = D.regional_summary(table, test_regions=[], relabel_regions=[])
    assert len(rows) == 1
    assert rows[0].deviance == pytest.approx(0.0, abs=1e-12)


def test_regional_summary_matches_direct_computation(synth):
    rows = D.regional_summary(synth)
    y = synth.col("ClaimNb")
    v = synth.col("Exposure")
    regions = synth.col("Region")
    for row in rows:
        sel = regions == row.region
        assert row.claims == y[sel].sum()
        assert row.exposure == pytest.approx(v[sel].sum())
        rate = y[sel].sum() / v[sel].sum()
        assert row.rate == pytest.approx(rate)
        from helpers import poisson_deviance_reference

        assert row.deviance == pytest.approx(poisson_deviance_reference(y[sel], rate * v[sel]), abs=1e-12)


def test_weighted_regional_deviances_cover_all_segments(synth):
    rows = D.regional_summary(synth)
    agg = D.weighted_regional_deviances(rows)
    assert set(agg) == {"whole_portfolio", "test", "train_unseen", "train_region_provided"}
    # whole-portfolio figure is the exposure-weighted mean over all regions
    total = sum(r.exposure for r in rows)
    want = sum(r.exposure * r.deviance for r in rows) / total
    assert agg["whole_portfolio"] == pytest.approx(want, abs=1e-12)
