"""Classification metrics, stratified k-fold cross-validation, random search."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .baselines import train_cart, train_logistic
from .errors import DataError
from .gbt import TrainConfig, train

METRIC_NAMES = ("accuracy", "roc_auc", "precision", "recall", "f1")
TABLE_COLUMNS = ("Accuracy", "ROC_AUC", "Precision", "Recall", "F1")
MODEL_IDS = ("gbt", "logistic", "cart")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricSet:
    accuracy: float
    precision: float
    recall: float
    f1: float
    roc_auc: float = float("nan")
    degenerate: list[str] = field(default_factory=list)

    def as_row(self) -> list[float]:
        return [getattr(self, m) for m in METRIC_NAMES]


def _aligned(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.size != y.size:
        raise DataError(f"length mismatch: {s.size} scores vs {y.size} labels")
    return s, y


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionMatrix:
    """Predict positive iff score >= threshold."""
    if not 0 <= threshold <= 1:
        raise DataError(f"threshold must lie in [0, 1], got {threshold}")
    s, y = _aligned(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return ConfusionMatrix(
        tp=int(np.sum(pred & pos)), fp=int(np.sum(pred & ~pos)), tn=int(np.sum(~pred & ~pos)), fn=int(np.sum(~pred & pos))
    )


def metrics(cm: ConfusionMatrix) -> MetricSet:
    """Accuracy, precision, recall, F1.  A zero denominator yields 0 and is flagged."""
    flags = []

    def ratio(num, den, name):
        if den == 0:
            flags.append(name)
            return 0.0
        return num / den

    acc = ratio(cm.tp + cm.tn, cm.total, "accuracy")
    p = ratio(cm.tp, cm.tp + cm.fp, "precision")
    r = ratio(cm.tp, cm.tp + cm.fn, "recall")
    f1 = ratio(2 * p * r, p + r, "f1")
    return MetricSet(acc, p, r, f1, degenerate=flags)


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve by the trapezoid rule over distinct thresholds.

    Tied scores contribute a diagonal segment, so the result equals
    P(score+ > score-) + P(tie)/2.
    """
    s, y = _aligned(scores, labels)
    pos = y == 1
    P, N = int(pos.sum()), int((~pos).sum())
    if P == 0 or N == 0:
        raise DataError("ROC AUC needs at least one positive and one negative label")
    order = np.argsort(-s, kind="mergesort")
    s, pos = s[order], pos[order]
    distinct = np.flatnonzero(np.diff(s)) if s.size > 1 else np.empty(0, int)
    ends = np.concatenate((distinct, [s.size - 1]))
    tps = np.cumsum(pos)[ends]
    fps = (ends + 1) - tps
    # Trapezoids summed in integer counts (twice the area times P*N), then scaled once.
    tp_i = np.concatenate(([0], tps))
    fp_i = np.concatenate(([0], fps))
    doubled = np.sum((fp_i[1:] - fp_i[:-1]) * (tp_i[1:] + tp_i[:-1]))
    return float(doubled) / (2.0 * P * N)


def score_metrics(scores, labels, threshold: float = 0.5) -> MetricSet:
    ms = metrics(confusion(scores, labels, threshold))
    y = np.asarray(labels)
    if np.unique(y).size == 2:
        ms.roc_auc = roc_auc(scores, labels)
    else:
        ms.degenerate.append("roc_auc")
        ms.roc_auc = 0.0
    return ms


# ---------------------------------------------------------------- folds


def stratified_folds(labels, k: int, seed: int, stratify: bool | None = None) -> list[np.ndarray]:
    """Shuffled fold index arrays.  Each class is dealt round-robin, the second
    class continuing where the first stopped, so fold sizes and per-fold class
    counts each differ by at most one.  ``stratify=None`` turns stratification
    off only for leave-one-out (k equal to the row count)."""
    y = np.asarray(labels)
    M = y.size
    if k < 2 or k > M:
        raise DataError(f"fold count must lie in [2, {M}], got {k}")
    if stratify is None:
        stratify = k < M
    rng = np.random.default_rng(seed)
    fold_of = np.empty(M, dtype=np.int64)
    if stratify:
        classes, counts = np.unique(y, return_counts=True)
        if counts.min() < k:
            raise DataError(f"cannot stratify {k} folds: smallest class has {counts.min()} rows")
        offset = 0
        for c in classes:
            idx = np.flatnonzero(y == c)
            idx = idx[rng.permutation(idx.size)]
            fold_of[idx] = (offset + np.arange(idx.size)) % k
            offset = (offset + idx.size) % k
    else:
        perm = rng.permutation(M)
        fold_of[perm] = np.arange(M) % k
    return [np.flatnonzero(fold_of == f) for f in range(k)]


# ---------------------------------------------------------------- trainers

Trainer = Callable[[np.ndarray, np.ndarray, TrainConfig], object]


def _fit_gbt(X, y, config):
    return train(X, y, config)


def _fit_logistic(X, y, config):
    return train_logistic(X, y)


def _fit_cart(X, y, config):
    return train_cart(X, y)


TRAINERS: dict[str, Trainer] = {"gbt": _fit_gbt, "logistic": _fit_logistic, "cart": _fit_cart}


@dataclass
class CVReport:
    model: str
    k: int
    seed: int
    config: dict
    fold_metrics: list[MetricSet]
    folds: list[list[int]] = field(repr=False, default_factory=list)

    def mean(self) -> dict[str, float]:
        return {m: float(np.mean([getattr(f, m) for f in self.fold_metrics])) for m in METRIC_NAMES}

    def std(self) -> dict[str, float]:
        return {m: float(np.std([getattr(f, m) for f in self.fold_metrics])) for m in METRIC_NAMES}

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "k": self.k,
            "fold_seed": self.seed,
            "config": self.config,
            "mean": self.mean(),
            "std": self.std(),
            "folds": [asdict(f) for f in self.fold_metrics],
        }


def kfold_cv(
    X,
    y,
    k: int = 10,
    config: TrainConfig = TrainConfig(),
    trainer: str = "gbt",
    seed: int = 0,
    threshold: float = 0.5,
    threads: int = 1,
    folds: list[np.ndarray] | None = None,
) -> CVReport:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if trainer not in TRAINERS:
        raise DataError(f"unknown model id {trainer!r}; expected one of {sorted(TRAINERS)}")
    folds = folds if folds is not None else stratified_folds(y, k, seed)
    fit = TRAINERS[trainer]

    def run(f: int) -> MetricSet:
        test = folds[f]
        mask = np.ones(y.size, dtype=bool)
        mask[test] = False
        model = fit(X[mask], y[mask], config)
        return score_metrics(model.predict_proba(X[test]), y[test], threshold)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fold_metrics = list(pool.map(run, range(len(folds))))
    else:
        fold_metrics = [run(f) for f in range(len(folds))]
    cfg = config.to_dict() if trainer == "gbt" else {}
    return CVReport(trainer, len(folds), seed, cfg, fold_metrics, [f.tolist() for f in folds])


# ---------------------------------------------------------------- search


@dataclass(frozen=True)
class SearchSpace:
    num_rounds: tuple[int, int] = (20, 100)
    learning_rate: tuple[float, float] = (0.05, 0.5)
    max_depth: tuple[int, int] = (2, 6)
    reg_lambda: tuple[float, float] = (0.0, 5.0)
    gamma: tuple[float, float] = (0.0, 2.0)
    min_child_rows: tuple[int, int] = (1, 5)
    budget: int = 25

    def __post_init__(self):
        for name in ("num_rounds", "learning_rate", "max_depth", "reg_lambda", "gamma", "min_child_rows"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise DataError(f"search range for {name} is empty: [{lo}, {hi}]")
        if self.budget < 1:
            raise DataError("search budget must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        d = dict(d)
        if "lambda" in d:
            d["reg_lambda"] = d.pop("lambda")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)

    def sample(self, rng: np.random.Generator, seed: int = 0) -> TrainConfig:
        return TrainConfig(
            num_rounds=int(rng.integers(self.num_rounds[0], self.num_rounds[1] + 1)),
            learning_rate=float(rng.uniform(*self.learning_rate)),
            max_depth=int(rng.integers(self.max_depth[0], self.max_depth[1] + 1)),
            reg_lambda=float(rng.uniform(*self.reg_lambda)),
            gamma=float(rng.uniform(*self.gamma)),
            min_child_rows=int(rng.integers(self.min_child_rows[0], self.min_child_rows[1] + 1)),
            seed=seed,
        )


@dataclass
class SearchResult:
    best: TrainConfig
    report: CVReport
    trials: list[tuple[TrainConfig, float]]

    def to_dict(self) -> dict:
        return {
            "best": self.best.to_dict(),
            "best_mean_accuracy": self.report.mean()["accuracy"],
            "trials": [{"config": c.to_dict(), "mean_accuracy": a} for c, a in self.trials],
            "report": self.report.to_dict(),
        }


def random_search(X, y, space: SearchSpace = SearchSpace(), k: int = 10, seed: int = 0, threads: int = 1) -> SearchResult:
    """Sample ``budget`` configurations; keep the best mean CV accuracy (earliest on ties).

    Every trial uses the same folds.
    """
    rng = np.random.default_rng(seed)
    configs = [space.sample(rng, seed) for _ in range(space.budget)]
    folds = stratified_folds(y, k, seed)

    def run(c: TrainConfig) -> CVReport:
        return kfold_cv(X, y, k, c, "gbt", seed, folds=folds)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(run, configs))
    else:
        reports = [run(c) for c in configs]
    accs = [r.mean()["accuracy"] for r in reports]
    best = int(np.argmax(accs))  # first maximum
    return SearchResult(configs[best], reports[best], list(zip(configs, accs)))


# ---------------------------------------------------------------- comparison

MODEL_LABELS = {"gbt": "Boosted Trees", "logistic": "Logistic Regression", "cart": "Decision Tree"}


def compare_models(
    X, y, k: int = 10, seed: int = 0, config: TrainConfig = TrainConfig(), threads: int = 1, threshold: float = 0.5
) -> dict[str, CVReport]:
    """Cross-validate every implemented model on one shared fold assignment."""
    folds = stratified_folds(y, k, seed)
    return {
        m: kfold_cv(X, y, k, config, m, seed, threshold=threshold, threads=threads, folds=folds) for m in MODEL_IDS
    }


def comparison_table(reports: dict[str, CVReport]) -> list[dict]:
    rows = []
    for model in ("logistic", "cart", "gbt"):
        if model in reports:
            mean = reports[model].mean()
            rows.append({"Model": MODEL_LABELS[model], **{c: mean[m] for c, m in zip(TABLE_COLUMNS, METRIC_NAMES)}})
    return rows


def table_csv(rows: list[dict]) -> str:
    """Aligned CSV: each column padded to its widest cell."""
    header = ["Model", *TABLE_COLUMNS]
    cells = [header] + [[r["Model"], *(f"{r[c]:.4f}" for c in TABLE_COLUMNS)] for r in rows]
    widths = [max(len(row[j]) for row in cells) for j in range(len(header))]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in cells:
        w.writerow([c.ljust(widths[j]) if j == 0 else c.rjust(widths[j]) for j, c in enumerate(row)])
    return buf.getvalue()


def report_csv(report: CVReport) -> str:
    header = ["Fold", *TABLE_COLUMNS]
    rows = [[str(i), *(f"{v:.6f}" for v in m.as_row())] for i, m in enumerate(report.fold_metrics)]
    mean, std = report.mean(), report.std()
    rows.append(["mean", *(f"{mean[m]:.6f}" for m in METRIC_NAMES)])
    rows.append(["std", *(f"{std[m]:.6f}" for m in METRIC_NAMES)])
    cells = [header] + rows
    widths = [max(len(r[j]) for r in cells) for j in range(len(header))]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in cells:
        w.writerow([c.rjust(widths[j]) for j, c in enumerate(row)])
    return buf.getvalue()


def dumps(obj) -> str:
    def default(o):
        if isinstance(o, float) and math.isnan(o):
            return None
        raise TypeError(type(o))

    return json.dumps(obj, indent=2, default=default)
