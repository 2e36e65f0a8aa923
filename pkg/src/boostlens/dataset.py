"""Survey data: schema, CSV ingest, screening, pruning, encoding, synthesis."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import DataError, UndefinedCorrelation

KINDS = ("likert7", "yes_no", "count", "category")
COMPLETION_COLUMN = "completion_seconds"

# Rule ids recorded in a rejection log.
R0_MALFORMED = "R0"  # row could not be parsed at load time
R1_DRIVING_YEARS = "R1"  # YearsDriving > Age - min driving age
R2_INVALID_VALUE = "R2"  # blank, non-numeric or out-of-range typed field
R3_STRAIGHT_LINE = "R3"  # every Likert answer identical
R4_TOO_FAST = "R4"  # completion time below threshold
SCREEN_RULES = (R1_DRIVING_YEARS, R2_INVALID_VALUE, R3_STRAIGHT_LINE, R4_TOO_FAST)

_YES = {"yes", "y", "1", "true"}
_NO = {"no", "n", "0", "false"}


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    question: str = ""
    codes: dict | None = None
    max_value: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "category" and not self.codes:
            raise DataError(f"category column {self.name!r} needs a code table")

    def parse(self, raw: str) -> float | None:
        """Typed value of a raw cell, or None if it is blank or invalid."""
        text = raw.strip()
        if not text:
            return None
        if self.kind == "category":
            return float(self.codes[text]) if text in self.codes else None
        if self.kind == "yes_no":
            low = text.lower()
            return 1.0 if low in _YES else 0.0 if low in _NO else None
        try:
            value = float(text)
        except ValueError:
            return None
        if not math.isfinite(value):
            return None
        if self.kind == "likert7":
            return value if value in (1, 2, 3, 4, 5, 6, 7) else None
        if value < 0 or (self.max_value is not None and value > self.max_value):
            return None
        return value


@dataclass(frozen=True)
class SurveySchema:
    columns: tuple[Column, ...]
    response: str = "Trust"

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError("schema column names must be unique")
        if names.count(self.response) != 1:
            raise DataError(f"schema must contain the response column {self.response!r} exactly once")
        if self.column(self.response).kind != "likert7":
            raise DataError("the response column must be a 7-point Likert item")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def feature_names(self) -> list[str]:
        return [c.name for c in self.columns if c.name != self.response]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_dict(self) -> dict:
        cols = []
        for c in self.columns:
            d = {k: v for k, v in asdict(c).items() if v not in (None, "")}
            cols.append(d)
        return {"response": self.response, "columns": cols}

    @classmethod
    def from_dict(cls, d: dict) -> "SurveySchema":
        try:
            cols = tuple(Column(**c) for c in d["columns"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed schema document: {exc}") from exc
        return cls(cols, d.get("response", "Trust"))

    @classmethod
    def load(cls, path) -> "SurveySchema":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"schema file not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))


AGE_MIDPOINTS = {
    "<18": 17.0,
    "18-24": 21.0,
    "25-34": 29.5,
    "35-44": 39.5,
    "45-54": 49.5,
    "55-64": 59.5,
    ">=65": 70.0,
}

EDUCATION_CODES = {
    "High school degree or less": 0,
    "Some college": 1,
    "Associate degree": 2,
    "Bachelor's degree": 3,
    "Master's degree": 4,
    "Professional degree": 5,
    "Doctoral degree": 6,
}


def default_schema() -> SurveySchema:
    """The 24-item trust questionnaire: 23 predictors plus the Trust response."""
    L, Y, C = "likert7", "yes_no", "count"
    cols = [
        Column("Gender", "category", "What is your gender?", {"Female": 0, "Male": 1, "Other": 2}),
        Column("Age", "category", "What is your age?", dict(AGE_MIDPOINTS)),
        Column("EducationLevel", "category", "Highest level of school completed", dict(EDUCATION_CODES)),
        Column("DrivingLicense", Y, "Do you have a valid driving license?"),
        Column("YearsDriving", C, "For how many years have you been a driver?", max_value=100),
        Column("DrivingDaysPerWeek", C, "On average, how many days a week do you drive?", max_value=7),
        Column("EagertoAdopt", L, "Eagerness level to adopt new technologies"),
        Column("KnowledgeinAVs", L, "Knowledge level in regard to autonomous vehicles"),
        Column("AVAccident", Y, "Heard stories about autonomous vehicles in accidents?"),
        Column("AssistTechExperience", L, "Experience with driving assistance technology"),
        Column("BeeninAV", Y, "Have you ever been in an autonomous vehicle?"),
        Column("Risk", L, "Risk level of using an autonomous vehicle"),
        Column("Benefit", L, "How beneficial it is to use an autonomous vehicle"),
        Column("Assess5inAV", Y, "Let a child under 5 use an autonomous system alone?"),
        Column("Assess6to12inAV", Y, "Let a child aged 6-12 use an autonomous system alone?"),
        Column("Assess13to17inAV", Y, "Let a child aged 13-17 use an autonomous system alone?"),
        Column("Assess18inAV", Y, "Let an adult use an autonomous system alone?"),
        Column("Control", L, "How much do you feel in control when driving?"),
        Column("Excitement", L, "How much do you feel excited when driving?"),
        Column("Enjoyment", L, "How much do you enjoy driving?"),
        Column("Stress", L, "How much do you feel stressed when driving?"),
        Column("Fear", L, "How much do you feel scared when driving?"),
        Column("Nervousness", L, "How much do you feel nervous when driving?"),
        Column("Trust", L, "In general, how much would you trust an autonomous vehicle"),
    ]
    return SurveySchema(tuple(cols), "Trust")


@dataclass(frozen=True)
class SurveyRecord:
    index: int
    values: tuple[str, ...]
    completion_seconds: float | None = None


@dataclass(frozen=True)
class SurveyDataset:
    schema: SurveySchema
    records: tuple[SurveyRecord, ...]
    rejection_log: tuple[tuple[int, str], ...] = ()

    def __post_init__(self):
        rejected = {i for i, _ in self.rejection_log}
        if any(r.index in rejected for r in self.records):
            raise DataError("rejection log overlaps the retained records")
        width = len(self.schema.columns)
        for r in self.records:
            if len(r.values) != width:
                raise DataError(f"record {r.index} has {len(r.values)} values, schema has {width}")

    def __len__(self) -> int:
        return len(self.records)

    def rejected_rules(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {}
        for i, rule in self.rejection_log:
            out.setdefault(i, []).append(rule)
        return out


@dataclass(frozen=True)
class FeatureMatrix:
    names: tuple[str, ...]
    values: np.ndarray
    row_ids: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != len(self.names):
            raise DataError(f"matrix shape {v.shape} does not match {len(self.names)} feature names")
        if v.shape[0] == 0:
            raise DataError("feature matrix has no rows")
        if not np.all(np.isfinite(v)):
            raise DataError("feature matrix contains missing values")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def drop(self, names) -> "FeatureMatrix":
        keep = [i for i, n in enumerate(self.names) if n not in set(names)]
        return FeatureMatrix(tuple(self.names[i] for i in keep), self.values[:, keep], self.row_ids)


@dataclass(frozen=True)
class ScreenConfig:
    min_driving_age: float = 14.0
    min_completion_seconds: float = 60.0
    rules: tuple[str, ...] = SCREEN_RULES
    age_column: str = "Age"
    years_column: str = "YearsDriving"

    @classmethod
    def from_dict(cls, d: dict) -> "ScreenConfig":
        d = dict(d)
        if "rules" in d:
            d["rules"] = tuple(d["rules"])
        return cls(**d)


# ---------------------------------------------------------------- ingest


def load_csv(path, schema: SurveySchema | None = None) -> SurveyDataset:
    """Read a survey export.  The header must list the schema columns in
    order; a ``completion_seconds`` column may appear anywhere."""
    schema = schema or default_schema()
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file, expected a header row")
    header = [h.strip() for h in rows[0]]
    dupes = sorted({h for h in header if header.count(h) > 1})
    if dupes:
        raise DataError(f"{path}: duplicate header column(s) {dupes}")
    t_col = header.index(COMPLETION_COLUMN) if COMPLETION_COLUMN in header else None
    data_cols = [h for h in header if h != COMPLETION_COLUMN]
    if data_cols != schema.names:
        missing = [n for n in schema.names if n not in data_cols]
        extra = [n for n in data_cols if n not in schema.names]
        detail = f"missing {missing}" if missing else ""
        detail += f"{'; ' if detail else ''}unexpected {extra}" if extra else ""
        raise DataError(f"{path}: header mismatch ({detail or 'column order differs from schema'})")

    records, log = [], []
    index = 0
    for row in rows[1:]:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            log.append((index, R0_MALFORMED))
            index += 1
            continue
        seconds = None
        if t_col is not None:
            cell = row[t_col].strip()
            if cell:
                try:
                    seconds = float(cell)
                except ValueError:
                    seconds = -1.0
                if not math.isfinite(seconds) or seconds < 0:
                    log.append((index, R0_MALFORMED))
                    index += 1
                    continue
        values = tuple(c for j, c in enumerate(row) if j != t_col)
        records.append(SurveyRecord(index, values, seconds))
        index += 1
    return SurveyDataset(schema, tuple(records), tuple(log))


def write_csv(dataset: SurveyDataset, path) -> None:
    """Write raw records (retained ones only) in the ingest format."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dataset.schema.names + [COMPLETION_COLUMN])
        for r in dataset.records:
            t = "" if r.completion_seconds is None else repr(r.completion_seconds)
            w.writerow(list(r.values) + [t])


# ---------------------------------------------------------------- screening


def fired_rules(record: SurveyRecord, schema: SurveySchema, config: ScreenConfig = ScreenConfig()) -> list[str]:
    """Screening rule ids that fire on one record, in rule order."""
    parsed = [c.parse(v) for c, v in zip(schema.columns, record.values)]
    fired = []
    if R1_DRIVING_YEARS in config.rules:
        try:
            age = parsed[schema.index(config.age_column)]
            years = parsed[schema.index(config.years_column)]
        except ValueError:
            age = years = None
        if age is not None and years is not None and years > age - config.min_driving_age:
            fired.append(R1_DRIVING_YEARS)
    if R2_INVALID_VALUE in config.rules:
        for c, raw, val in zip(schema.columns, record.values, parsed):
            # Unknown category levels are an encoding error, not a screening one.
            if val is None and (c.kind != "category" or not raw.strip()):
                fired.append(R2_INVALID_VALUE)
                break
    if R3_STRAIGHT_LINE in config.rules:
        likert = [v for c, v in zip(schema.columns, parsed) if c.kind == "likert7"]
        if len(likert) >= 2 and None not in likert and len(set(likert)) == 1:
            fired.append(R3_STRAIGHT_LINE)
    if R4_TOO_FAST in config.rules:
        t = record.completion_seconds
        if t is not None and t < config.min_completion_seconds:
            fired.append(R4_TOO_FAST)
    return fired


def screen_invalid(dataset: SurveyDataset, config: ScreenConfig = ScreenConfig()) -> SurveyDataset:
    """Move every record that violates a screening rule into the rejection log."""
    kept, log = [], list(dataset.rejection_log)
    for rec in dataset.records:
        rules = fired_rules(rec, dataset.schema, config)
        if rules:
            log.extend((rec.index, r) for r in rules)
        else:
            kept.append(rec)
    log.sort()
    return SurveyDataset(dataset.schema, tuple(kept), tuple(log))


# ---------------------------------------------------------------- correlation


def pearson_correlation(x, y) -> float:
    """Product-moment correlation.

    Returns 0.0 when exactly one series is constant; raises
    UndefinedCorrelation when both are.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise DataError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise DataError("correlation needs at least two observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0 and syy == 0:
        raise UndefinedCorrelation("both series are constant")
    if sxx == 0 or syy == 0:
        return 0.0
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def correlation_matrix(values: np.ndarray) -> np.ndarray:
    n = values.shape[1]
    R = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            R[i, j] = R[j, i] = pearson_correlation(values[:, i], values[:, j])
    return R


class Dropped(NamedTuple):
    kept: str | None
    dropped: str
    r: float
    reason: str  # "constant" or "correlated"


def prune_correlated(matrix: FeatureMatrix, threshold: float = 0.85) -> tuple[FeatureMatrix, list[Dropped]]:
    """Drop one column of every pair whose |r| exceeds ``threshold``.

    Constant columns go first.  Flagged pairs are visited by descending
    |r|; of a pair still fully present, the column with the higher mean |r|
    against the other columns is dropped, the later one on ties.
    """
    if not 0 < threshold <= 1:
        raise DataError(f"correlation threshold must lie in (0, 1], got {threshold}")
    names = list(matrix.names)
    V = matrix.values
    dropped: list[Dropped] = []
    live = []
    for j, name in enumerate(names):
        if np.all(V[:, j] == V[0, j]):
            dropped.append(Dropped(None, name, float("nan"), "constant"))
        else:
            live.append(j)
    if len(live) < 2:
        return matrix.drop([d.dropped for d in dropped]), dropped

    R = np.abs(correlation_matrix(V[:, live]))
    k = len(live)
    mean_abs = (R.sum(axis=1) - 1.0) / (k - 1)
    pairs = [(R[a, b], a, b) for a in range(k) for b in range(a + 1, k) if R[a, b] > threshold]
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    gone: set[int] = set()
    for r, a, b in pairs:
        if a in gone or b in gone:
            continue
        drop, keep = (a, b) if mean_abs[a] > mean_abs[b] else (b, a)
        gone.add(drop)
        signed = pearson_correlation(V[:, live[a]], V[:, live[b]])
        dropped.append(Dropped(names[live[keep]], names[live[drop]], signed, "correlated"))
    return matrix.drop([d.dropped for d in dropped]), dropped


# ---------------------------------------------------------------- encoding


def binarize_trust(value) -> int | None:
    """5-7 -> 1 (trust), 1-3 -> 0 (distrust), 4 -> None (excluded)."""
    if value not in (1, 2, 3, 4, 5, 6, 7):
        raise DataError(f"trust value {value!r} is not on the 1..7 scale")
    if value >= 5:
        return 1
    if value <= 3:
        return 0
    return None


def encode_features(dataset: SurveyDataset) -> tuple[FeatureMatrix, np.ndarray]:
    schema = dataset.schema
    resp = schema.index(schema.response)
    rows, labels, ids = [], [], []
    for rec in dataset.records:
        typed = []
        for c, raw in zip(schema.columns, rec.values):
            v = c.parse(raw)
            if v is None:
                if c.kind == "category" and raw.strip():
                    raise DataError(f"record {rec.index}: unknown {c.name} level {raw.strip()!r}")
                raise DataError(f"record {rec.index}: invalid {c.name} value {raw!r} (screen the data first)")
            typed.append(v)
        label = binarize_trust(int(typed[resp]))
        if label is None:
            continue
        rows.append(typed[:resp] + typed[resp + 1:])
        labels.append(label)
        ids.append(rec.index)
    if not rows:
        raise DataError("no rows left after encoding")
    return FeatureMatrix(tuple(schema.feature_names), np.asarray(rows), np.asarray(ids)), np.asarray(labels)


@dataclass
class CleanResult:
    matrix: FeatureMatrix
    labels: np.ndarray
    screened: SurveyDataset
    dropped: list[Dropped]
    excluded_neutral: list[int]

    def report(self) -> dict:
        return {
            "retained_records": len(self.screened),
            "rows": int(self.matrix.shape[0]),
            "features": list(self.matrix.names),
            "rejections": [{"row": i, "rule": r} for i, r in self.screened.rejection_log],
            "excluded_neutral_trust": self.excluded_neutral,
            "dropped_columns": [
                {"dropped": d.dropped, "kept": d.kept, "r": None if math.isnan(d.r) else d.r, "reason": d.reason}
                for d in self.dropped
            ],
        }


def clean(dataset: SurveyDataset, screen: ScreenConfig = ScreenConfig(), threshold: float = 0.85) -> CleanResult:
    """Screen, encode and prune in one go."""
    screened = screen_invalid(dataset, screen)
    matrix, labels = encode_features(screened)
    kept_ids = set(matrix.row_ids.tolist())
    neutral = [r.index for r in screened.records if r.index not in kept_ids]
    pruned, dropped = prune_correlated(matrix, threshold)
    return CleanResult(pruned, labels, screened, dropped, neutral)


def write_clean_csv(matrix: FeatureMatrix, labels, path, label_name: str = "Trust") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", *matrix.names, label_name])
        ids = matrix.row_ids if matrix.row_ids is not None else np.arange(matrix.shape[0])
        for rid, row, lab in zip(ids, matrix.values, labels):
            w.writerow([int(rid), *(repr(float(v)) for v in row), int(lab)])


def read_clean_csv(path, label_name: str = "Trust") -> tuple[FeatureMatrix, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "row_id" or rows[0][-1] != label_name:
        raise DataError(f"{path}: not a cleaned feature file (expected row_id ... {label_name} header)")
    names = tuple(rows[0][1:-1])
    try:
        body = np.asarray([[float(c) for c in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric cell ({exc})") from exc
    if body.ndim != 2 or body.shape[0] == 0:
        raise DataError(f"{path}: no data rows")
    labels = body[:, -1].astype(np.int64)
    return FeatureMatrix(names, body[:, 1:-1], body[:, 0].astype(np.int64)), labels


# ---------------------------------------------------------------- synthesis


def _likert(*p):
    return {"probs": list(p)}


def default_marginals() -> dict[str, dict]:
    return {
        "Gender": {"probs": {"Female": 0.475, "Male": 0.522, "Other": 0.003}},
        "Age": {"probs": {"<18": 0.001, "18-24": 0.083, "25-34": 0.377, "35-44": 0.227, "45-54": 0.144,
                          "55-64": 0.109, ">=65": 0.059}},
        "EducationLevel": {"probs": {"High school degree or less": 0.079, "Some college": 0.169,
                                     "Associate degree": 0.115, "Bachelor's degree": 0.433,
                                     "Master's degree": 0.183, "Professional degree": 0.012,
                                     "Doctoral degree": 0.009}},
        "DrivingLicense": {"p_yes": 0.95},
        "YearsDriving": {"span_of": "Age", "start_age": 16},
        "DrivingDaysPerWeek": {"probs": [0.03, 0.05, 0.08, 0.12, 0.14, 0.18, 0.15, 0.25]},
        "EagertoAdopt": _likert(0.03, 0.05, 0.07, 0.10, 0.25, 0.28, 0.22),
        "KnowledgeinAVs": _likert(0.06, 0.10, 0.14, 0.19, 0.24, 0.17, 0.10),
        "AVAccident": {"p_yes": 0.764},
        "AssistTechExperience": _likert(0.08, 0.11, 0.14, 0.21, 0.21, 0.15, 0.10),
        "BeeninAV": {"p_yes": 0.227},
        "Risk": _likert(0.04, 0.09, 0.13, 0.17, 0.24, 0.19, 0.14),
        "Benefit": _likert(0.04, 0.06, 0.08, 0.11, 0.23, 0.26, 0.22),
        "Assess5inAV": {"p_yes": 0.11},
        "Assess6to12inAV": {"p_yes": 0.11},
        "Assess13to17inAV": {"p_yes": 0.30},
        "Assess18inAV": {"p_yes": 0.86},
        "Control": _likert(0.01, 0.02, 0.02, 0.04, 0.16, 0.35, 0.40),
        "Excitement": _likert(0.07, 0.09, 0.12, 0.21, 0.22, 0.16, 0.13),
        "Enjoyment": _likert(0.04, 0.06, 0.09, 0.17, 0.24, 0.22, 0.18),
        "Stress": _likert(0.12, 0.17, 0.14, 0.13, 0.22, 0.14, 0.08),
        "Fear": _likert(0.22, 0.22, 0.14, 0.12, 0.14, 0.10, 0.06),
        "Nervousness": _likert(0.21, 0.22, 0.15, 0.12, 0.14, 0.10, 0.06),
    }


@dataclass
class SynthConfig:
    """Generator for survey-shaped data with a known ground-truth logit.

    The logit is ``intercept + sum(main * z) + sum(coef * z_a * z_b) + noise * e``
    with ``z`` the standardized encoded feature values and ``e`` standard
    logistic noise; the label is ``logit > 0``.
    """

    n_rows: int = 2000
    marginals: dict = field(default_factory=default_marginals)
    correlated_pairs: list = field(
        default_factory=lambda: [["Age", "YearsDriving", 0.88], ["Fear", "Nervousness", 0.87]]
    )
    main_effects: dict = field(
        default_factory=lambda: {"Benefit": 2.0, "Risk": -1.6, "KnowledgeinAVs": 0.4, "EagertoAdopt": 0.4,
                                 "Excitement": 0.3}
    )
    interactions: list = field(default_factory=lambda: [["Benefit", "BeeninAV", 2.5]])
    intercept: float = 0.3
    noise: float = 0.3
    neutral_rate: float = 0.0
    contamination: dict = field(default_factory=lambda: {r: 0.0 for r in SCREEN_RULES})
    completion_median: float = 300.0

    def validate(self, schema: SurveySchema) -> None:
        names = set(schema.feature_names)
        if self.n_rows < 1:
            raise DataError("n_rows must be positive")
        seen = set()
        for a, b, r in self.correlated_pairs:
            if not -1 <= r <= 1:
                raise DataError(f"infeasible target correlation {r} for ({a}, {b})")
            for c in (a, b):
                if c not in names:
                    raise DataError(f"correlated pair names unknown column {c!r}")
                if c in seen:
                    raise DataError(f"column {c!r} appears in more than one correlated pair")
                seen.add(c)
        for c in self.main_effects:
            if c not in names:
                raise DataError(f"main effect names unknown column {c!r}")
        for a, b, _ in self.interactions:
            if a not in names or b not in names or a == b:
                raise DataError(f"invalid interaction pair ({a}, {b})")
        missing = [c for c in schema.feature_names if c not in self.marginals]
        if missing:
            raise DataError(f"no marginal declared for {missing}")
        if not 0 <= self.neutral_rate < 1 or self.noise < 0:
            raise DataError("neutral_rate must be in [0, 1) and noise >= 0")
        for rule, rate in self.contamination.items():
            if rule not in SCREEN_RULES or not 0 <= rate < 1:
                raise DataError(f"bad contamination entry {rule}: {rate}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown synth option(s): {sorted(unknown)}")
        base = cls()
        if "marginals" in d:
            d = {**d, "marginals": {**base.marginals, **d["marginals"]}}
        if "contamination" in d:
            d = {**d, "contamination": {**base.contamination, **d["contamination"]}}
        return replace(base, **d)

    @classmethod
    def load(cls, path) -> "SynthConfig":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"synth config not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))


def _inverse_cdf(u: np.ndarray, probs: Sequence[float]) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if np.any(p < 0) or p.sum() <= 0:
        raise DataError(f"invalid probability vector {list(probs)}")
    cdf = np.cumsum(p / p.sum())
    return np.minimum(np.searchsorted(cdf, u, side="right"), p.size - 1)


class _Column:
    """Maps a uniform draw to encoded numeric values and raw cell text."""

    def __init__(self, col: Column, spec: dict):
        self.col = col
        self.spec = spec
        if "span_of" in spec:
            self.levels = None
        elif col.kind == "yes_no":
            self.levels = [(0.0, "No"), (1.0, "Yes")]
            self.probs = [1 - spec["p_yes"], spec["p_yes"]]
        elif col.kind == "category":
            probs = spec["probs"]
            self.levels = [(float(col.codes[k]), k) for k in probs]
            self.probs = list(probs.values())
        elif col.kind == "likert7":
            self.levels = [(float(v), str(v)) for v in range(1, 8)]
            self.probs = spec["probs"]
            if len(self.probs) != 7:
                raise DataError(f"{col.name}: a Likert marginal needs 7 probabilities")
        else:
            self.probs = spec["probs"]
            self.levels = [(float(v), str(v)) for v in range(len(self.probs))]

    def values(self, u: np.ndarray, encoded: dict) -> np.ndarray:
        if self.levels is None:
            ref = encoded[self.spec["span_of"]]
            span = np.maximum(ref - self.spec.get("start_age", 16), 0.0)
            return np.floor(u * (span + 1)).clip(0, span)
        codes = np.asarray([v for v, _ in self.levels])
        return codes[_inverse_cdf(u, self.probs)]

    def text(self, value: float) -> str:
        if self.levels is None:
            return str(int(value))
        for v, t in self.levels:
            if v == value:
                return t
        raise AssertionError(value)


def synthesize(config: SynthConfig | None = None, seed: int = 0, schema: SurveySchema | None = None) -> SurveyDataset:
    """Deterministic survey sample with planted correlations and effects."""
    config = config or SynthConfig()
    schema = schema or default_schema()
    config.validate(schema)
    M = config.n_rows
    feats = schema.feature_names
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(6)]
    latent_rng, noise_rng, trust_rng, time_rng, dirty_rng, neutral_rng = streams

    z = latent_rng.standard_normal((M, len(feats)))
    cols = {c: _Column(schema.column(c), config.marginals[c]) for c in feats}
    partner = {}
    for a, b, r in config.correlated_pairs:
        partner[b] = (a, r)
    # Columns derived from another ("span_of") need their reference first.
    order = sorted(feats, key=lambda c: "span_of" in config.marginals[c])
    order = [c for c in order if c not in partner] + [c for c in order if c in partner]
    encoded: dict[str, np.ndarray] = {}

    for c in order:
        j = feats.index(c)
        if c not in partner:
            encoded[c] = cols[c].values(ndtr(z[:, j]), encoded)
            continue
        a, target = partner[c]
        za, eb = z[:, feats.index(a)], z[:, j]

        def corr(rho):
            u = ndtr(rho * za + math.sqrt(1 - rho * rho) * eb)
            vals = cols[c].values(u, encoded)
            if np.all(vals == vals[0]):
                return 0.0
            return pearson_correlation(encoded[a], vals)

        lo, hi = -0.999, 0.999
        r_lo, r_hi = corr(lo), corr(hi)
        if not r_lo <= target <= r_hi:
            raise DataError(
                f"infeasible correlation target {target} for ({a}, {c}): reachable [{r_lo:.3f}, {r_hi:.3f}]"
            )
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if corr(mid) < target:
                lo = mid
            else:
                hi = mid
        rho = 0.5 * (lo + hi)
        encoded[c] = cols[c].values(ndtr(rho * za + math.sqrt(1 - rho * rho) * eb), encoded)

    def standardized(c):
        v = encoded[c]
        sd = v.std()
        return (v - v.mean()) / sd if sd > 0 else np.zeros(M)

    logit = np.full(M, float(config.intercept))
    for c, beta in config.main_effects.items():
        logit += beta * standardized(c)
    for a, b, coef in config.interactions:
        logit += coef * standardized(a) * standardized(b)
    logit += config.noise * noise_rng.logistic(size=M)
    labels = logit > 0

    hi_levels = trust_rng.choice([5, 6, 7], size=M, p=[0.4, 0.35, 0.25])
    lo_levels = trust_rng.choice([3, 2, 1], size=M, p=[0.4, 0.35, 0.25])
    trust = np.where(labels, hi_levels, lo_levels)
    trust = np.where(neutral_rng.random(M) < config.neutral_rate, 4, trust)
    seconds = np.round(config.completion_median * np.exp(0.4 * time_rng.standard_normal(M)), 1)
    seconds = np.maximum(seconds, 90.0)

    cells = {c: [cols[c].text(v) for v in encoded[c]] for c in feats}
    cells[schema.response] = [str(int(t)) for t in trust]
    likert_cols = [c.name for c in schema.columns if c.kind == "likert7"]

    dirty = {r: dirty_rng.random(M) < config.contamination.get(r, 0.0) for r in SCREEN_RULES}
    fill = dirty_rng.integers(1, 8, size=M)
    extra_years = dirty_rng.integers(5, 30, size=M)
    for i in range(M):
        if dirty[R1_DRIVING_YEARS][i] and "Age" in encoded:
            cells["YearsDriving"][i] = str(int(encoded["Age"][i] - 14 + extra_years[i]))
        if dirty[R2_INVALID_VALUE][i]:
            cells["YearsDriving"][i] = "ten"
        if dirty[R3_STRAIGHT_LINE][i]:
            for c in likert_cols:
                cells[c][i] = str(int(fill[i]))
        if dirty[R4_TOO_FAST][i]:
            seconds[i] = float(fill[i] * 5)

    records = tuple(
        SurveyRecord(i, tuple(cells[c][i] for c in schema.names), float(seconds[i])) for i in range(M)
    )
    return SurveyDataset(schema, records, ())


def planted_logit_terms(config: SynthConfig) -> dict:
    """Ground truth in a form tests and reports can compare against."""
    return {
        "main_effects": dict(config.main_effects),
        "interactions": [(a, b, c) for a, b, c in config.interactions],
    }
