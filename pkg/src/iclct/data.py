"""French MTPL-style claim frequency data: ingestion, encoding, splits, summaries.

The expected CSV schema is one row per policy with columns IDpol, ClaimNb,
Exposure, Area, VehPower, VehAge, DrivAge, BonusMalus, VehBrand, VehGas,
Density, Region (case-sensitive, comma separated, UTF-8). An optional split
membership column (e.g. "split" with values train/test) is honored when
present; otherwise a seeded deterministic fallback split is drawn and
flagged in the returned report.

Feature handling: the four categorical features are index-encoded against a
training-split vocabulary with one reserved trailing "unseen" level; the
five continuous features are standardized with training-split statistics,
Density after a log transform (it is heavily right-skewed).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .decoder import poisson_deviance
from .errors import ConfigError, ParseError, SchemaError

logger = logging.getLogger(__name__)

ID_COLUMN = "IDpol"
RESPONSE_COLUMN = "ClaimNb"
WEIGHT_COLUMN = "Exposure"
CAT_FEATURES = ["Area", "VehBrand", "VehGas", "Region"]
CONT_FEATURES = ["VehPower", "VehAge", "DrivAge", "BonusMalus", "Density"]
LOG_TRANSFORMED = {"Density"}
REQUIRED_COLUMNS = [ID_COLUMN, RESPONSE_COLUMN, WEIGHT_COLUMN] + CAT_FEATURES + CONT_FEATURES
SPLIT_COLUMN_CANDIDATES = ["split", "Split", "LearnTest", "learn_test", "set", "Set", "dataset"]

UNSEEN = "unseen"

# published characteristics of the cleaned dataset's standard split
STANDARD_TRAIN_POLICIES = 610_206
STANDARD_TEST_POLICIES = 67_801
STANDARD_TRAIN_CLAIMS = 23_738
STANDARD_TEST_CLAIMS = 2_645
FALLBACK_SPLIT_SEED = 100

# zero-shot experiment: lowest-exposure regions become the test set (relabeled
# "unseen"); the next-smallest stay in training but are relabeled "unseen" so
# the model learns to handle that level.
ZERO_SHOT_TEST_REGIONS = ["R43", "R21", "R42", "R94", "R83", "R74", "R23", "R22", "R26", "R25", "R73"]
ZERO_SHOT_RELABEL_REGIONS = ["R41", "R54", "R31", "R72", "R91", "R52"]


@dataclass
class PolicyTable:
    """Columnar policy records; string columns stay as numpy unicode arrays."""

    columns: dict

    @property
    def n(self) -> int:
        return len(self.columns[ID_COLUMN])

    def __len__(self) -> int:
        return self.n

    def col(self, name: str) -> np.ndarray:
        return self.columns[name]

    def subset(self, idx) -> "PolicyTable":
        return PolicyTable({k: v[idx] for k, v in self.columns.items()})

    def with_column(self, name: str, values: np.ndarray) -> "PolicyTable":
        cols = dict(self.columns)
        cols[name] = values
        return PolicyTable(cols)

    def row(self, i: int) -> dict:
        return {k: v[i] for k, v in self.columns.items()}


@dataclass
class VocabularyMap:
    """Per-feature ordered level -> index maps with a trailing "unseen" index."""

    levels: dict  # feature -> list of observed levels, sorted

    def index_of(self, feature: str, level: str) -> int:
        try:
            return self._lookup[feature][level]
        except (AttributeError, KeyError):
            self._build_lookup()
            return self._lookup[feature].get(level, self.unseen_index(feature))

    def _build_lookup(self):
        self._lookup = {f: {lvl: i for i, lvl in enumerate(lv)} for f, lv in self.levels.items()}

    def unseen_index(self, feature: str) -> int:
        return len(self.levels[feature])

    def cardinality(self, feature: str) -> int:
        return len(self.levels[feature]) + 1  # + "unseen"

    def level_of(self, feature: str, index: int) -> str:
        levels = self.levels[feature]
        return levels[index] if index < len(levels) else UNSEEN

    def to_json(self) -> str:
        return json.dumps(self.levels, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "VocabularyMap":
        return cls(levels=json.loads(text))

    @classmethod
    def fit(cls, table: PolicyTable) -> "VocabularyMap":
        return cls(levels={f: sorted(set(table.col(f).tolist())) for f in CAT_FEATURES})


@dataclass
class TrainStats:
    """Standardization statistics of the continuous features (training split)."""

    mean: dict
    std: dict

    @classmethod
    def fit(cls, table: PolicyTable) -> "TrainStats":
        mean, std = {}, {}
        for f in CONT_FEATURES:
            x = table.col(f).astype(np.float64)
            if f in LOG_TRANSFORMED:
                x = np.log(x)
            mean[f] = float(x.mean())
            std[f] = float(x.std()) or 1.0
        return cls(mean=mean, std=std)

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean, "std": self.std}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainStats":
        d = json.loads(text)
        return cls(mean=d["mean"], std=d["std"])


@dataclass
class EncodedDataset:
    """Model-ready arrays: categorical indices, standardized continuous, y, v."""

    ids: np.ndarray
    cat: np.ndarray   # (n, 4) int64
    cont: np.ndarray  # (n, 5) float64
    y: np.ndarray
    v: np.ndarray
    vocab: VocabularyMap
    stats: TrainStats

    @property
    def n(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return self.n

    def subset(self, idx) -> "EncodedDataset":
        return EncodedDataset(self.ids[idx], self.cat[idx], self.cont[idx],
                              self.y[idx], self.v[idx], self.vocab, self.stats)

    def cat_cardinalities(self) -> list:
        return [self.vocab.cardinality(f) for f in CAT_FEATURES]


def _parse_float(text: str, column: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"line {line}: column {column} is not numeric: {text!r}") from None


def load_csv(path) -> tuple[PolicyTable, str | None]:
    """Parse and validate a policy CSV.

    Returns the table plus the name of a split membership column when one
    was present. Violated row invariants (negative claim count, nonpositive
    exposure, driver age below 18) raise ParseError with the line number.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        pos = {name: i for i, name in enumerate(header)}
        missing = [c for c in REQUIRED_COLUMNS if c not in pos]
        if missing:
            raise SchemaError(f"{path}: missing required columns {missing}")
        split_col = next((c for c in SPLIT_COLUMN_CANDIDATES if c in pos), None)

        raw = {c: [] for c in REQUIRED_COLUMNS}
        split_values = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"line {line_no}: expected {len(header)} fields, got {len(row)}")
            claim_nb = _parse_float(row[pos[RESPONSE_COLUMN]], RESPONSE_COLUMN, line_no)
            exposure = _parse_float(row[pos[WEIGHT_COLUMN]], WEIGHT_COLUMN, line_no)
            driv_age = _parse_float(row[pos["DrivAge"]], "DrivAge", line_no)
            if claim_nb < 0:
                raise ParseError(f"line {line_no}: ClaimNb must be >= 0, got {claim_nb}")
            if exposure <= 0:
                raise ParseError(f"line {line_no}: Exposure must be > 0, got {exposure}")
            if driv_age < 18:
                raise ParseError(f"line {line_no}: DrivAge must be >= 18, got {driv_age}")
            raw[ID_COLUMN].append(int(_parse_float(row[pos[ID_COLUMN]], ID_COLUMN, line_no)))
            raw[RESPONSE_COLUMN].append(claim_nb)
            raw[WEIGHT_COLUMN].append(exposure)
            for c in CAT_FEATURES:
                raw[c].append(row[pos[c]])
            for c in CONT_FEATURES:
                raw[c].append(_parse_float(row[pos[c]], c, line_no))
            if split_col is not None:
                split_values.append(row[pos[split_col]])

    columns = {ID_COLUMN: np.asarray(raw[ID_COLUMN], dtype=np.int64)}
    columns[RESPONSE_COLUMN] = np.asarray(raw[RESPONSE_COLUMN], dtype=np.float64)
    columns[WEIGHT_COLUMN] = np.asarray(raw[WEIGHT_COLUMN], dtype=np.float64)
    for c in CAT_FEATURES:
        columns[c] = np.asarray(raw[c], dtype=str)
    for c in CONT_FEATURES:
        columns[c] = np.asarray(raw[c], dtype=np.float64)
    if split_col is not None:
        columns["__split__"] = np.asarray(split_values, dtype=str)
    table = PolicyTable(columns)
    logger.info("loaded %d policies, %.0f claims, %.1f exposure years from %s",
                table.n, columns[RESPONSE_COLUMN].sum(), columns[WEIGHT_COLUMN].sum(), path)
    return table, split_col


def encode(table: PolicyTable, vocab: VocabularyMap, stats: TrainStats) -> EncodedDataset:
    """Index categorical levels (unknown -> "unseen") and standardize continuous."""
    n = table.n
    cat = np.empty((n, len(CAT_FEATURES)), dtype=np.int64)
    for j, f in enumerate(CAT_FEATURES):
        levels = vocab.levels[f]
        lookup = {lvl: i for i, lvl in enumerate(levels)}
        unseen = vocab.unseen_index(f)
        cat[:, j] = [lookup.get(level, unseen) for level in table.col(f)]
    cont = np.empty((n, len(CONT_FEATURES)), dtype=np.float64)
    for j, f in enumerate(CONT_FEATURES):
        x = table.col(f).astype(np.float64)
        if f in LOG_TRANSFORMED:
            x = np.log(x)
        cont[:, j] = (x - stats.mean[f]) / stats.std[f]
    return EncodedDataset(
        ids=table.col(ID_COLUMN).copy(),
        cat=cat,
        cont=cont,
        y=table.col(RESPONSE_COLUMN).astype(np.float64),
        v=table.col(WEIGHT_COLUMN).astype(np.float64),
        vocab=vocab,
        stats=stats,
    )


@dataclass
class SplitReport:
    source: str  # "column" or "fallback"
    train_policies: int
    test_policies: int
    train_claims: float
    test_claims: float
    train_exposure: float
    test_exposure: float
    warnings: list = field(default_factory=list)

    def frequency(self, which: str) -> float:
        if which == "train":
            return self.train_claims / self.train_exposure
        return self.test_claims / self.test_exposure


def _split_report(train: PolicyTable, test: PolicyTable, source: str) -> SplitReport:
    rep = SplitReport(
        source=source,
        train_policies=train.n,
        test_policies=test.n,
        train_claims=float(train.col(RESPONSE_COLUMN).sum()),
        test_claims=float(test.col(RESPONSE_COLUMN).sum()),
        train_exposure=float(train.col(WEIGHT_COLUMN).sum()),
        test_exposure=float(test.col(WEIGHT_COLUMN).sum()),
    )
    if (rep.train_policies, rep.test_policies) != (STANDARD_TRAIN_POLICIES, STANDARD_TEST_POLICIES):
        msg = ("split counts differ from the published cleaned-dataset characteristics: "
               f"train {rep.train_policies} vs {STANDARD_TRAIN_POLICIES}, "
               f"test {rep.test_policies} vs {STANDARD_TEST_POLICIES}")
        rep.warnings.append(msg)
        logger.warning("%s", msg)
    return rep


def standard_split(table: PolicyTable, split_column_present: bool = False) -> tuple[PolicyTable, PolicyTable, SplitReport]:
    """Train/test split as shipped with the data, or a deterministic fallback.

    A split membership column (detected by load_csv and stored as
    ``__split__``) takes precedence. Without one, a seeded permutation
    assigns the published train count (or 90% of rows) to training; the
    report flags the fallback.
    """
    if "__split__" in table.columns:
        values = np.char.lower(table.col("__split__").astype(str))
        is_train = np.isin(values, ["train", "learn", "learning"])
        is_test = np.isin(values, ["test", "holdout"])
        unknown = ~(is_train | is_test)
        if unknown.any():
            bad = sorted(set(values[unknown]))
            raise SchemaError(f"split column has unrecognized values {bad[:5]}")
        train, test = table.subset(is_train), table.subset(is_test)
        return train, test, _split_report(train, test, "column")
    rng = np.random.default_rng(FALLBACK_SPLIT_SEED)
    order = rng.permutation(table.n)
    n_train = STANDARD_TRAIN_POLICIES if table.n == STANDARD_TRAIN_POLICIES + STANDARD_TEST_POLICIES \
        else int(round(0.9 * table.n))
    train = table.subset(np.sort(order[:n_train]))
    test = table.subset(np.sort(order[n_train:]))
    rep = _split_report(train, test, "fallback")
    rep.warnings.append("no split membership column found; used seeded fallback split")
    return train, test, rep


@dataclass
class ZeroShotReport:
    train_policies: int
    test_policies: int
    train_claims: float
    test_claims: float
    train_exposure: float
    test_exposure: float
    train_relabeled: int
    test_relabeled: int

    def frequency(self, which: str) -> float:
        if which == "train":
            return self.train_claims / self.train_exposure
        return self.test_claims / self.test_exposure


def zero_shot_split(table: PolicyTable,
                    test_regions=None, relabel_regions=None) -> tuple[PolicyTable, PolicyTable, ZeroShotReport]:
    """Region-novelty split over the full dataset.

    Rows in the designated low-exposure regions form the test set with
    Region relabeled to "unseen"; within the remaining training rows the
    next-smallest regions are also relabeled "unseen" (but kept), so the
    encoder learns a parameter for that level. Original labels are
    preserved in a Region_orig column.
    """
    test_regions = ZERO_SHOT_TEST_REGIONS if test_regions is None else list(test_regions)
    relabel_regions = ZERO_SHOT_RELABEL_REGIONS if relabel_regions is None else list(relabel_regions)
    present = set(table.col("Region").tolist())
    missing = [r for r in test_regions + relabel_regions if r not in present]
    if missing:
        raise ConfigError(f"regions not present in the dataset: {missing}")
    if set(test_regions) & set(relabel_regions):
        raise ConfigError("test and train-relabeled region lists must be disjoint")

    region = table.col("Region")
    in_test = np.isin(region, test_regions)
    in_relabel = np.isin(region, relabel_regions)

    table = table.with_column("Region_orig", region.copy())
    new_region = region.copy().astype(object)
    new_region[in_test | in_relabel] = UNSEEN
    table = table.with_column("Region", np.asarray(new_region, dtype=str))

    test = table.subset(in_test)
    train = table.subset(~in_test)
    report = ZeroShotReport(
        train_policies=train.n,
        test_policies=test.n,
        train_claims=float(train.col(RESPONSE_COLUMN).sum()),
        test_claims=float(test.col(RESPONSE_COLUMN).sum()),
        train_exposure=float(train.col(WEIGHT_COLUMN).sum()),
        test_exposure=float(test.col(WEIGHT_COLUMN).sum()),
        train_relabeled=int((train.col("Region") == UNSEEN).sum()),
        test_relabeled=test.n,
    )
    return train, test, report


@dataclass
class RegionalRow:
    region: str
    claims: float
    exposure: float
    rate: float
    deviance: float
    unseen: bool
    split: str


def regional_summary(table: PolicyTable,
                     test_regions=None, relabel_regions=None) -> list[RegionalRow]:
    """Per-region claim counts, exposure, rate, and own-rate Poisson deviance.

    The deviance of a region uses that region's mean observed rate as the
    prediction for each of its rows (mu_i = rate * v_i). Regions are labeled
    by their zero-shot designation. Requires original (pre-relabel) labels.
    """
    test_regions = ZERO_SHOT_TEST_REGIONS if test_regions is None else list(test_regions)
    relabel_regions = ZERO_SHOT_RELABEL_REGIONS if relabel_regions is None else list(relabel_regions)
    region_col = "Region_orig" if "Region_orig" in table.columns else "Region"
    regions = table.col(region_col)
    y = table.col(RESPONSE_COLUMN)
    v = table.col(WEIGHT_COLUMN)
    rows = []
    for region in sorted(set(regions.tolist())):
        sel = regions == region
        claims = float(y[sel].sum())
        exposure = float(v[sel].sum())
        rate = claims / exposure
        dev = poisson_deviance(y[sel], rate * v[sel]) if claims > 0 else 0.0
        rows.append(RegionalRow(
            region=region,
            claims=claims,
            exposure=exposure,
            rate=rate,
            deviance=dev,
            unseen=region in test_regions or region in relabel_regions,
            split="test" if region in test_regions else "train",
        ))
    rows.sort(key=lambda r: (r.split != "test", not r.unseen, r.exposure))
    return rows


def weighted_regional_deviances(rows: list[RegionalRow],
                                test_regions=None, relabel_regions=None) -> dict:
    """Exposure-weighted averages of the per-region deviances by segment."""
    test_regions = set(ZERO_SHOT_TEST_REGIONS if test_regions is None else test_regions)
    relabel_regions = set(ZERO_SHOT_RELABEL_REGIONS if relabel_regions is None else relabel_regions)

    def avg(selected):
        total = sum(r.exposure for r in selected)
        return sum(r.exposure * r.deviance for r in selected) / total

    return {
        "whole_portfolio": avg(rows),
        "test": avg([r for r in rows if r.region in test_regions]),
        "train_unseen": avg([r for r in rows if r.region in relabel_regions]),
        "train_region_provided": avg([r for r in rows
                                      if r.region not in test_regions and r.region not in relabel_regions]),
    }


def summarize(table: PolicyTable) -> dict:
    """Headline counts used in human-readable reports."""
    y = table.col(RESPONSE_COLUMN)
    v = table.col(WEIGHT_COLUMN)
    return {
        "policies": table.n,
        "claims": float(y.sum()),
        "exposure": float(v.sum()),
        "frequency": float(y.sum() / v.sum()),
    }


# ---------------------------------------------------------------------------
# synthetic portfolio (for tests, demos and machine-scale experiments)
# ---------------------------------------------------------------------------

_SYNTH_REGIONS = ZERO_SHOT_TEST_REGIONS + ZERO_SHOT_RELABEL_REGIONS + ["R53", "R11", "R93", "R82", "R24"]
_SYNTH_BRANDS = [f"B{i}" for i in (1, 2, 3, 4, 5, 6, 10, 11, 12, 13, 14)]
_SYNTH_AREAS = list("ABCDEF")


def synthetic_portfolio(n: int, seed: int = 0) -> PolicyTable:
    """Generate an MTPL-shaped portfolio with a known nonlinear frequency surface.

    Counts are Poisson draws from rate(x) * exposure, so supervised models
    have real signal to find; overall frequency lands near the 7-10% range
    typical of motor liability portfolios.
    """
    rng = np.random.default_rng(seed)
    region_weights = np.linspace(1.0, 14.0, len(_SYNTH_REGIONS))
    region_weights /= region_weights.sum()
    region = rng.choice(_SYNTH_REGIONS, size=n, p=region_weights)
    area = rng.choice(_SYNTH_AREAS, size=n)
    brand = rng.choice(_SYNTH_BRANDS, size=n)
    gas = rng.choice(["Diesel", "Regular"], size=n)
    veh_power = rng.integers(4, 16, size=n).astype(float)
    veh_age = rng.integers(0, 26, size=n).astype(float)
    driv_age = rng.integers(18, 90, size=n).astype(float)
    bonus_malus = np.minimum(50 + rng.exponential(14.0, size=n).astype(int), 150).astype(float)
    density = np.exp(rng.normal(5.5, 1.6, size=n))
    exposure = np.round(rng.uniform(0.05, 1.0, size=n), 2)

    rate = 0.07 * np.ones(n)
    rate *= np.where(driv_age < 26, 2.2, 1.0)
    rate *= np.where(driv_age > 70, 1.3, 1.0)
    rate *= (bonus_malus / 100.0) ** 1.5
    rate *= np.where(gas == "Diesel", 1.15, 1.0)
    rate *= 1.0 + 0.04 * (veh_power - 4)
    rate *= np.where(veh_age > 15, 0.8, 1.0)
    rate *= np.exp(0.06 * (np.log(density) - 5.5))
    region_factor = {r: f for r, f in zip(_SYNTH_REGIONS, np.linspace(0.8, 1.25, len(_SYNTH_REGIONS)))}
    rate *= np.vectorize(region_factor.get)(region)
    rate = np.clip(rate, 0.015, 0.6)

    claims = rng.poisson(rate * exposure).astype(float)
    return PolicyTable({
        ID_COLUMN: np.arange(1, n + 1, dtype=np.int64),
        RESPONSE_COLUMN: claims,
        WEIGHT_COLUMN: exposure,
        "Area": area.astype(str),
        "VehPower": veh_power,
        "VehAge": veh_age,
        "DrivAge": driv_age,
        "BonusMalus": bonus_malus,
        "VehBrand": brand.astype(str),
        "VehGas": gas.astype(str),
        "Density": density,
        "Region": region.astype(str),
    })


def write_csv(table: PolicyTable, path, split: np.ndarray | None = None) -> None:
    """Write a policy table back to the canonical CSV schema (for fixtures)."""
    header = list(REQUIRED_COLUMNS)
    if split is not None:
        header.append("split")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(table.n):
            row = [table.col(c)[i] for c in REQUIRED_COLUMNS]
            if split is not None:
                row.append(split[i])
            writer.writerow(row)
