import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boostlens.dataset import (
    AGE_MIDPOINTS,
    COMPLETION_COLUMN,
    FeatureMatrix,
    ScreenConfig,
    SurveyDataset,
    SurveyRecord,
    SurveySchema,
    SynthConfig,
    binarize_trust,
    clean,
    correlation_matrix,
    default_schema,
    encode_features,
    fired_rules,
    load_csv,
    pearson_correlation,
    prune_correlated,
    read_clean_csv,
    screen_invalid,
    synthesize,
    write_clean_csv,
    write_csv,
)
from boostlens.errors import DataError, UndefinedCorrelation

SCHEMA = default_schema()


def clean_values(**overrides) -> tuple[str, ...]:
    base = {
        "Gender": "Female",
        "Age": "35-44",
        "EducationLevel": "Master's degree",
        "DrivingLicense": "Yes",
        "YearsDriving": "15",
        "DrivingDaysPerWeek": "5",
        "BeeninAV": "No",
        "AVAccident": "Yes",
        "Assess5inAV": "No",
        "Assess6to12inAV": "No",
        "Assess13to17inAV": "Yes",
        "Assess18inAV": "Yes",
    }
    likert = iter([5, 3, 4, 2, 6, 3, 5, 4, 2, 3, 6, 6])
    vals = []
    for c in SCHEMA.columns:
        if c.name in overrides:
            vals.append(str(overrides[c.name]))
        elif c.name in base:
            vals.append(base[c.name])
        else:
            vals.append(str(next(likert)))
    return tuple(vals)


def write_rows(path, rows, header=None, completion=None):
    header = header or SCHEMA.names
    lines = [",".join(header + ([COMPLETION_COLUMN] if completion else []))]
    for i, r in enumerate(rows):
        lines.append(",".join(list(r) + ([str(completion[i])] if completion else [])))
    path.write_text("\n".join(lines) + "\n")


# ------------------------------------------------------------ schema & ingest


def test_default_schema_shape():
    assert len(SCHEMA.columns) == 24
    assert SCHEMA.response == "Trust"
    assert len(SCHEMA.feature_names) == 23
    assert len(set(SCHEMA.names)) == 24


def test_schema_roundtrip(tmp_path):
    path = tmp_path / "schema.json"
    path.write_text(json.dumps(SCHEMA.to_dict()))
    assert SurveySchema.load(path) == SCHEMA


def test_load_well_formed(tmp_path):
    path = tmp_path / "s.csv"
    write_rows(path, [clean_values()] * 3)
    ds = load_csv(path)
    assert len(ds) == 3 and ds.rejection_log == ()


def test_letters_in_numeric_field_survive_load_then_fail_screening(tmp_path):
    path = tmp_path / "s.csv"
    write_rows(path, [clean_values(YearsDriving="abc"), clean_values()])
    ds = load_csv(path)
    assert len(ds) == 2 and ds.records[0].values[SCHEMA.index("YearsDriving")] == "abc"
    screened = screen_invalid(ds)
    assert screened.rejection_log == ((0, "R2"),)


def test_missing_response_column_is_header_mismatch(tmp_path):
    path = tmp_path / "s.csv"
    write_rows(path, [clean_values()[:-1]], header=SCHEMA.names[:-1])
    with pytest.raises(DataError, match="header mismatch"):
        load_csv(path)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(DataError, match="nope.csv"):
        load_csv(tmp_path / "nope.csv")


def test_wrong_cell_count_logged_as_malformed(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text(",".join(SCHEMA.names) + "\n" + ",".join(clean_values()) + "\n1,2,3\n")
    ds = load_csv(path)
    assert len(ds) == 1 and ds.rejection_log == ((1, "R0"),)


def test_csv_roundtrip_with_completion_times(tmp_path):
    ds = synthesize(SynthConfig(n_rows=30), seed=3)
    path = tmp_path / "raw.csv"
    write_csv(ds, path)
    back = load_csv(path)
    assert back.records == ds.records


# ------------------------------------------------------------ screening


def record(i=0, seconds=None, **overrides):
    return SurveyRecord(i, clean_values(**overrides), seconds)


def test_screen_rules_fire_individually():
    assert fired_rules(record(), SCHEMA) == []
    # 18-24 has midpoint 21; 30 years is more than 21 - 14
    assert fired_rules(record(Age="18-24", YearsDriving=30), SCHEMA) == ["R1"]
    assert fired_rules(record(YearsDriving=""), SCHEMA) == ["R2"]
    assert fired_rules(record(DrivingDaysPerWeek=9), SCHEMA) == ["R2"]
    all_four = {c.name: 4 for c in SCHEMA.columns if c.kind == "likert7"}
    assert fired_rules(record(**all_four), SCHEMA) == ["R3"]
    assert fired_rules(record(seconds=12.0), SCHEMA) == ["R4"]


def test_every_fired_rule_is_logged():
    recs = (
        record(0),
        record(1, seconds=5.0, Age="18-24", YearsDriving=30),
        record(2, YearsDriving="ten"),
    )
    out = screen_invalid(SurveyDataset(SCHEMA, recs))
    assert [r.index for r in out.records] == [0]
    assert out.rejection_log == ((1, "R1"), (1, "R4"), (2, "R2"))


def test_rules_can_be_disabled():
    recs = (record(0, seconds=5.0),)
    out = screen_invalid(SurveyDataset(SCHEMA, recs), ScreenConfig(rules=("R1", "R2", "R3")))
    assert len(out) == 1


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_screening_idempotent_and_log_matches_rescan(seed):
    cfg = SynthConfig(n_rows=80, contamination={"R1": 0.1, "R2": 0.1, "R3": 0.1, "R4": 0.1})
    ds = synthesize(cfg, seed=seed)
    once = screen_invalid(ds)
    twice = screen_invalid(once)
    assert twice == once
    by_id = {r.index: r for r in ds.records}
    logged = once.rejected_rules()
    for i, rules in logged.items():
        assert rules == fired_rules(by_id[i], SCHEMA)
    for r in once.records:
        assert fired_rules(r, SCHEMA) == []


# ------------------------------------------------------------ correlation


def test_pearson_hand_values():
    x = [1.0, 2.0, 3.0]
    assert pearson_correlation(x, x) == pytest.approx(1.0, abs=1e-15)
    assert pearson_correlation(x, [-v for v in x]) == pytest.approx(-1.0, abs=1e-15)
    # Exact rational oracle: r = Sxy / sqrt(Sxx * Syy)
    xs, ys = [Fraction(v) for v in (1, 2, 3)], [Fraction(v) for v in (1, 2, 4)]
    mx, my = sum(xs) / 3, sum(ys) / 3
    sxy = sum((a - mx) * (b - my) for a, b in zip(xs, ys))
    sxx = sum((a - mx) ** 2 for a in xs)
    syy = sum((b - my) ** 2 for b in ys)
    expected = float(sxy) / math.sqrt(float(sxx * syy))
    assert expected == pytest.approx(0.98198, abs=1e-5)
    assert pearson_correlation([1, 2, 3], [1, 2, 4]) == pytest.approx(expected, abs=1e-15)


def test_pearson_degenerate_cases():
    assert pearson_correlation([1, 1, 1], [1, 2, 3]) == 0.0
    with pytest.raises(UndefinedCorrelation):
        pearson_correlation([1, 1], [2, 2])
    with pytest.raises(DataError):
        pearson_correlation([1, 2], [1, 2, 3])


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_pearson_symmetry_affine_invariance_sign(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 30))
    r = pearson_correlation(x, y)
    a, b = rng.uniform(0.1, 10, 2)
    assert pearson_correlation(y, x) == pytest.approx(r, abs=1e-12)
    assert pearson_correlation(a * x + 3, b * y - 1) == pytest.approx(r, abs=1e-12)
    assert pearson_correlation(-x, y) == pytest.approx(-r, abs=1e-12)


def test_prune_nothing_when_uncorrelated(rng):
    m = FeatureMatrix(("a", "b", "c"), rng.normal(size=(500, 3)))
    out, dropped = prune_correlated(m, 0.85)
    assert out.names == ("a", "b", "c") and dropped == []


def test_prune_three_mutually_correlated_keeps_one(rng):
    base = rng.normal(size=400)
    cols = np.column_stack([base + 0.1 * rng.normal(size=400) for _ in range(3)] + [rng.normal(size=400)])
    m = FeatureMatrix(("A", "B", "C", "D"), cols)
    out, dropped = prune_correlated(m, 0.85)
    assert len({"A", "B", "C"} & set(out.names)) == 1
    assert "D" in out.names
    # Greedy order: highest |r| pair first, drop the member with higher mean |r|.
    R = np.abs(correlation_matrix(cols))
    mean_abs = (R.sum(axis=1) - 1) / 3
    pairs = sorted(((R[a, b], a, b) for a in range(3) for b in range(a + 1, 3)), key=lambda p: -p[0])
    _, a, b = pairs[0]
    first = a if mean_abs[a] > mean_abs[b] else b
    assert dropped[0].dropped == "ABC"[first]


def test_prune_tie_drops_later_column():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    out, dropped = prune_correlated(FeatureMatrix(("a", "b"), np.column_stack([x, 2 * x])), 0.85)
    assert out.names == ("a",) and dropped[0].dropped == "b"


def test_prune_drops_constant_columns(rng):
    m = FeatureMatrix(("a", "k"), np.column_stack([rng.normal(size=10), np.ones(10)]))
    out, dropped = prune_correlated(m)
    assert out.names == ("a",) and dropped[0].reason == "constant"


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), threshold=st.floats(0.3, 0.95))
def test_prune_leaves_no_pair_above_threshold(seed, threshold):
    rng = np.random.default_rng(seed)
    latent = rng.normal(size=(60, 2))
    mix = rng.normal(size=(2, 6))
    cols = latent @ mix + 0.3 * rng.normal(size=(60, 6))
    out, _ = prune_correlated(FeatureMatrix(tuple("abcdef"), cols), threshold)
    R = np.abs(correlation_matrix(out.values))
    np.fill_diagonal(R, 0)
    assert R.max(initial=0) <= threshold


# ------------------------------------------------------------ encoding


@pytest.mark.parametrize("value,label", [(1, 0), (2, 0), (3, 0), (4, None), (5, 1), (6, 1), (7, 1)])
def test_binarize_trust(value, label):
    assert binarize_trust(value) == label


def test_binarize_out_of_range():
    with pytest.raises(DataError):
        binarize_trust(8)


def test_encode_yes_no_and_neutral_exclusion():
    recs = (record(0, BeeninAV="Yes", Trust=6), record(1, BeeninAV="No", Trust=2), record(2, Trust=4))
    m, y = encode_features(SurveyDataset(SCHEMA, recs))
    assert m.column("BeeninAV").tolist() == [1.0, 0.0]
    assert y.tolist() == [1, 0]
    assert m.row_ids.tolist() == [0, 1]
    assert m.column("Age").tolist() == [AGE_MIDPOINTS["35-44"]] * 2


def test_unknown_category_level_is_encoding_error():
    with pytest.raises(DataError, match="Gender"):
        encode_features(SurveyDataset(SCHEMA, (record(0, Gender="Robot"),)))


def test_clean_counts_and_feature_width():
    ds = synthesize(SynthConfig(n_rows=400, neutral_rate=0.1, contamination={"R2": 0.05}), seed=1)
    res = clean(ds)
    retained = len(res.screened)
    assert res.matrix.shape[0] == retained - len(res.excluded_neutral)
    assert res.matrix.shape[1] == 23 - len(res.dropped)
    # The two planted high-correlation pairs lose one member each.
    assert {d.dropped for d in res.dropped} & {"Age", "YearsDriving"}
    assert {d.dropped for d in res.dropped} & {"Fear", "Nervousness"}
    assert res.matrix.shape[1] == 21


def test_clean_csv_roundtrip(tmp_path):
    res = clean(synthesize(SynthConfig(n_rows=50), seed=2))
    path = tmp_path / "clean.csv"
    write_clean_csv(res.matrix, res.labels, path)
    m, y = read_clean_csv(path)
    assert m.names == res.matrix.names
    assert np.array_equal(m.values, res.matrix.values)
    assert np.array_equal(y, res.labels)
    assert np.array_equal(m.row_ids, res.matrix.row_ids)


# ------------------------------------------------------------ synthesis


def test_synthesis_deterministic():
    a = synthesize(SynthConfig(n_rows=100), seed=9)
    b = synthesize(SynthConfig(n_rows=100), seed=9)
    assert a == b
    assert synthesize(SynthConfig(n_rows=100), seed=10) != a


def test_planted_correlation_within_band():
    ds = synthesize(SynthConfig(n_rows=2000), seed=0)
    m, _ = encode_features(screen_invalid(ds))
    r = pearson_correlation(m.column("Age"), m.column("YearsDriving"))
    assert 0.83 <= r <= 0.93


def test_noise_free_single_feature_logit_thresholds_that_feature():
    cfg = SynthConfig(n_rows=500, main_effects={"Benefit": 1.0}, interactions=[], intercept=0.0, noise=0.0)
    ds = synthesize(cfg, seed=4)
    m, y = encode_features(ds)
    x = m.column("Benefit")
    # Standardized score z > 0 exactly when x exceeds the sample mean.
    assert np.array_equal(y, (x > x.mean()).astype(int))


def test_synth_config_validation():
    with pytest.raises(DataError):
        SynthConfig.from_dict({"bogus": 1})
    with pytest.raises(DataError):
        synthesize(SynthConfig(main_effects={"NotAColumn": 1.0}))
    with pytest.raises(DataError, match="infeasible"):
        synthesize(SynthConfig(n_rows=200, correlated_pairs=[["Gender", "DrivingLicense", 0.999]]))


def test_synth_config_roundtrip():
    cfg = SynthConfig(n_rows=10, noise=0.5)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
