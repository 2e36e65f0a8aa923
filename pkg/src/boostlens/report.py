"""Global summaries built from per-row explanations.

Every function here is a pure function of an :class:`ExplanationBatch`, so the
same batch always produces byte-identical export files.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import pearson_correlation
from .errors import DataError, UndefinedCorrelation
from .gbt import sigmoid

CONSTANT_COLOR_RANK = 0.5


@dataclass
class ExplanationBatch:
    names: list[str]
    phi: np.ndarray  # (M, n)
    X: np.ndarray  # (M, n)
    base: float
    phi2: np.ndarray | None = None  # (M, n, n)
    labels: np.ndarray | None = None
    margins: np.ndarray | None = None
    row_ids: np.ndarray | None = None

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        M, n = self.phi.shape
        if M == 0:
            raise DataError("explanation batch is empty")
        if self.X.shape != (M, n) or len(self.names) != n:
            raise DataError(f"inconsistent batch: phi {self.phi.shape}, X {self.X.shape}, {len(self.names)} names")
        if self.phi2 is not None:
            self.phi2 = np.asarray(self.phi2, dtype=float)
            if self.phi2.shape != (M, n, n):
                raise DataError(f"phi2 has shape {self.phi2.shape}, expected {(M, n, n)}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (M,):
                raise DataError("label count does not match batch rows")
        if self.margins is None:
            self.margins = self.base + self.phi.sum(axis=1)
        if self.row_ids is None:
            self.row_ids = np.arange(M)

    @property
    def n_rows(self) -> int:
        return self.phi.shape[0]

    @property
    def n_features(self) -> int:
        return self.phi.shape[1]

    def index(self, feature) -> int:
        if isinstance(feature, (int, np.integer)):
            if not 0 <= feature < self.n_features:
                raise DataError(f"feature index {feature} out of range")
            return int(feature)
        try:
            return self.names.index(feature)
        except ValueError:
            raise DataError(f"unknown feature {feature!r}") from None

    def _need_phi2(self) -> np.ndarray:
        if self.phi2 is None:
            raise DataError("interaction values are required; explain with interactions enabled")
        return self.phi2

    @classmethod
    def from_document(cls, doc: dict) -> "ExplanationBatch":
        if doc.get("format") != "boostlens-explanations":
            raise DataError("not a boostlens explanations document")
        rows = doc["rows"]
        if not rows:
            raise DataError("explanation document has no rows")
        has_pairs = "phi2" in rows[0]
        has_labels = "label" in rows[0]
        return cls(
            names=list(doc["feature_names"]),
            phi=np.array([r["phi"] for r in rows], dtype=float),
            X=np.array([r["x"] for r in rows], dtype=float),
            base=float(doc["base"]["margin"]),
            phi2=np.array([r["phi2"] for r in rows], dtype=float) if has_pairs else None,
            labels=np.array([r["label"] for r in rows]) if has_labels else None,
            margins=np.array([r["margin"] for r in rows], dtype=float),
            row_ids=np.array([r["row_id"] for r in rows]),
        )

    @classmethod
    def load(cls, path) -> "ExplanationBatch":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"explanations file not found: {path}")
        try:
            return cls.from_document(json.loads(path.read_text()))
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"{path}: malformed explanations document ({exc})") from exc


def _ranked(scores: np.ndarray) -> list[int]:
    # Stable sort on the negated score keeps lower indices first among ties.
    return [int(i) for i in np.argsort(-scores, kind="stable")]


# ---------------------------------------------------------------- importance


@dataclass
class ImportanceRanking:
    entries: list[tuple[str, float]]

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.entries]

    def rank_of(self, name: str) -> int:
        return self.names.index(name)


def importance_scores(batch: ExplanationBatch) -> np.ndarray:
    # Reduce each column as its own contiguous row so a column's score does
    # not depend on where it sits in the matrix (exact permutation equivariance).
    return np.ascontiguousarray(np.abs(batch.phi).T).mean(axis=1)


def feature_importance(batch: ExplanationBatch) -> ImportanceRanking:
    scores = importance_scores(batch)
    return ImportanceRanking([(batch.names[i], float(scores[i])) for i in _ranked(scores)])


def summary_points(batch: ExplanationBatch) -> list[dict]:
    """Per-feature (phi, value, color rank) points in importance order."""
    out = []
    for i in _ranked(importance_scores(batch)):
        x = batch.X[:, i]
        lo, hi = x.min(), x.max()
        rank = np.full_like(x, CONSTANT_COLOR_RANK) if hi == lo else (x - lo) / (hi - lo)
        out.append({"feature": batch.names[i], "phi": batch.phi[:, i].tolist(), "value": x.tolist(), "color": rank.tolist()})
    return out


# ---------------------------------------------------------------- interactions


@dataclass(frozen=True)
class Partner:
    feature: str
    partner: str
    strength: float
    degenerate: bool


def pair_sums(batch: ExplanationBatch) -> np.ndarray:
    """Matrix of sum over rows of |phi2_ij|; the diagonal holds the main effects."""
    return np.abs(batch._need_phi2()).sum(axis=0)


def strongest_partner(batch: ExplanationBatch, feature) -> Partner:
    i = batch.index(feature)
    if batch.n_features < 2:
        raise DataError("a partner needs at least two features")
    sums = pair_sums(batch)[i].copy()
    sums[i] = -np.inf
    j = int(np.argmax(sums))  # first maximum, so ties go to the lower index
    return Partner(batch.names[i], batch.names[j], float(sums[j]), degenerate=bool(sums[j] == 0))


@dataclass
class DependenceSeries:
    feature: str
    partner: str | None
    x: list[float]
    phi: list[float]
    partner_value: list[float] | None


def dependence_series(batch: ExplanationBatch, feature, partner=None) -> DependenceSeries:
    i = batch.index(feature)
    if partner is None and batch.phi2 is not None:
        partner = strongest_partner(batch, i).partner
    j = batch.index(partner) if partner is not None else None
    return DependenceSeries(
        feature=batch.names[i],
        partner=batch.names[j] if j is not None else None,
        x=batch.X[:, i].tolist(),
        phi=batch.phi[:, i].tolist(),
        partner_value=batch.X[:, j].tolist() if j is not None else None,
    )


@dataclass
class EffectRow:
    feature: str
    main: float  # sum of |phi2_ii|
    abs_phi: float  # sum of |phi_i|, the alternative reading of "main effect"
    partner: str
    interaction: float


def effect_sums(batch: ExplanationBatch) -> list[EffectRow]:
    """One row per feature in importance order: main effect sum and strongest pair sum."""
    sums = pair_sums(batch)
    abs_phi = np.abs(batch.phi).sum(axis=0)
    rows = []
    for i in _ranked(importance_scores(batch)):
        p = strongest_partner(batch, i)
        rows.append(EffectRow(batch.names[i], float(sums[i, i]), float(abs_phi[i]), p.partner, p.strength))
    return rows


@dataclass
class CorrelationRow:
    feature: str
    r_shap: float
    r_label: float | None
    degenerate: list[str] = field(default_factory=list)


def _safe_r(x, y) -> tuple[float, bool]:
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0, True
    try:
        return pearson_correlation(x, y), False
    except UndefinedCorrelation:
        return 0.0, True


def shap_correlations(batch: ExplanationBatch) -> list[CorrelationRow]:
    """Pearson r of each feature with its SHAP column and with the label.

    A constant column makes r undefined; it is reported as 0 with a flag.
    """
    rows = []
    for i in _ranked(importance_scores(batch)):
        x = batch.X[:, i]
        flags = []
        r_shap, bad = _safe_r(x, batch.phi[:, i])
        if bad:
            flags.append("r_shap")
        r_label = None
        if batch.labels is not None:
            r_label, bad = _safe_r(x, batch.labels.astype(float))
            if bad:
                flags.append("r_label")
        rows.append(CorrelationRow(batch.names[i], r_shap, r_label, flags))
    return rows


# ---------------------------------------------------------------- local


@dataclass
class ForceRecord:
    row: int
    row_id: int
    base: float
    contributions: list[tuple[str, float, float]]  # (feature, value, phi)
    margin: float
    probability: float
    label: int | None


def force_data(batch: ExplanationBatch, row: int) -> ForceRecord:
    if not 0 <= row < batch.n_rows:
        raise DataError(f"row index {row} out of range for {batch.n_rows} explained rows")
    phi = batch.phi[row]
    order = _ranked(np.abs(phi))
    margin = float(batch.margins[row])
    return ForceRecord(
        row=row,
        row_id=int(batch.row_ids[row]),
        base=batch.base,
        contributions=[(batch.names[i], float(batch.X[row, i]), float(phi[i])) for i in order],
        margin=margin,
        probability=float(sigmoid(margin)),
        label=int(batch.labels[row]) if batch.labels is not None else None,
    )


# ---------------------------------------------------------------- export

ARTIFACTS = ("importance", "summary", "dependence", "effects", "correlations", "force")


def _csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows([[repr(v) if isinstance(v, float) else v for v in r] for r in rows])
    return buf.getvalue()


def build_artifacts(batch: ExplanationBatch, force_rows: list[int] | None = None) -> dict[str, dict]:
    """Compute every report artifact as a JSON-ready document plus a CSV rendering.

    Artifacts that need interaction values are skipped when the batch has none.
    """
    force_rows = force_rows if force_rows is not None else [0]
    out: dict[str, dict] = {}

    ranking = feature_importance(batch)
    out["importance"] = {
        "json": {"feature_names": batch.names, "importance": [{"feature": n, "mean_abs_phi": s} for n, s in ranking.entries]},
        "csv": _csv(["feature", "mean_abs_phi"], [[n, s] for n, s in ranking.entries]),
    }

    points = summary_points(batch)
    out["summary"] = {
        "json": {"feature_names": batch.names, "features": points},
        "csv": _csv(
            ["feature", "row", "phi", "value", "color"],
            [[p["feature"], r, p["phi"][r], p["value"][r], p["color"][r]] for p in points for r in range(batch.n_rows)],
        ),
    }

    series = [dependence_series(batch, i) for i in range(batch.n_features)]
    out["dependence"] = {
        "json": {"feature_names": batch.names, "series": [s.__dict__ for s in series]},
        "csv": _csv(
            ["feature", "partner", "row", "x", "phi", "partner_value"],
            [
                [s.feature, s.partner or "", r, s.x[r], s.phi[r], s.partner_value[r] if s.partner_value else ""]
                for s in series
                for r in range(batch.n_rows)
            ],
        ),
    }

    if batch.phi2 is not None:
        effects = effect_sums(batch)
        sums = pair_sums(batch)
        out["effects"] = {
            "json": {
                "feature_names": batch.names,
                "effects": [e.__dict__ for e in effects],
                "pair_sums": sums.tolist(),
            },
            "csv": _csv(
                ["feature", "main_effect", "sum_abs_phi", "interaction_feature", "interaction_effect"],
                [[e.feature, e.main, e.abs_phi, e.partner, e.interaction] for e in effects],
            ),
        }

    corr = shap_correlations(batch)
    out["correlations"] = {
        "json": {"feature_names": batch.names, "correlations": [c.__dict__ for c in corr]},
        "csv": _csv(
            ["feature", "r_shap", "r_label", "degenerate"],
            [[c.feature, c.r_shap, "" if c.r_label is None else c.r_label, ";".join(c.degenerate)] for c in corr],
        ),
    }

    records = [force_data(batch, r) for r in force_rows]
    out["force"] = {
        "json": {"feature_names": batch.names, "records": [rec.__dict__ for rec in records]},
        "csv": _csv(
            ["row", "row_id", "base", "margin", "probability", "label", "feature", "value", "phi"],
            [
                [rec.row, rec.row_id, rec.base, rec.margin, rec.probability, "" if rec.label is None else rec.label, f, v, p]
                for rec in records
                for f, v, p in rec.contributions
            ],
        ),
    }
    return out


def write_report(batch: ExplanationBatch, out_dir, run_id: str = "run", fmt: str = "json", force_rows=None) -> list[Path]:
    if fmt not in ("json", "csv"):
        raise DataError(f"unknown format {fmt!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, doc in build_artifacts(batch, force_rows).items():
        path = out_dir / f"{run_id}.{name}.{fmt}"
        path.write_text(json.dumps(doc["json"], indent=1) if fmt == "json" else doc["csv"])
        written.append(path)
    return written
