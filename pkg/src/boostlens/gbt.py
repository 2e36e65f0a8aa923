"""Second-order gradient boosted trees with a logistic objective.

Each round fits a regression tree to the gradients and hessians of the
log-loss at the current margins.  Splits are found by exact greedy search
over every midpoint between consecutive distinct feature values, scored by

    gain = 1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)] - gamma

and leaves carry the Newton weight -G/(H+lambda).  All predictions and
leaf values are in log-odds (margin) units.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ModelError

MODEL_FORMAT = "boostlens-model"
MODEL_VERSION = 1

# Candidates whose gain is within this relative distance of the best one
# are treated as tied; ties go to the lowest feature, then lowest threshold.
GAIN_TIE_RTOL = 1e-10


@dataclass(frozen=True)
class TrainConfig:
    num_rounds: int = 60
    learning_rate: float = 0.3
    max_depth: int = 4
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_rows: int = 1
    seed: int = 0

    def __post_init__(self):
        if int(self.num_rounds) != self.num_rounds or self.num_rounds < 0:
            raise ModelError(f"num_rounds must be a non-negative integer, got {self.num_rounds}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ModelError(f"learning_rate must lie in (0, 1], got {self.learning_rate}")
        if int(self.max_depth) != self.max_depth or self.max_depth < 0:
            raise ModelError(f"max_depth must be a non-negative integer, got {self.max_depth}")
        if self.reg_lambda < 0:
            raise ModelError(f"lambda must be >= 0, got {self.reg_lambda}")
        if self.gamma < 0:
            raise ModelError(f"gamma must be >= 0, got {self.gamma}")
        if int(self.min_child_rows) != self.min_child_rows or self.min_child_rows < 1:
            raise ModelError(f"min_child_rows must be a positive integer, got {self.min_child_rows}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["reg_lambda"] = d.pop("lambda")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ModelError(f"unknown training option(s): {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class GradHess:
    """Sum of gradients and hessians over a set of rows."""

    grad: float = 0.0
    hess: float = 0.0
    rows: int = 0

    def __add__(self, other: "GradHess") -> "GradHess":
        return GradHess(self.grad + other.grad, self.hess + other.hess, self.rows + other.rows)

    @classmethod
    def of(cls, g, h) -> "GradHess":
        g = np.asarray(g, dtype=float)
        return cls(float(np.sum(g)), float(np.sum(h)), int(g.size))


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    gain: float
    left: GradHess
    right: GradHess


def sigmoid(margin):
    m = np.asarray(margin, dtype=float)
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    e = np.exp(m[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def logistic_loss(labels, margins) -> float:
    """Mean log-loss of binary labels under log-odds margins."""
    y = np.asarray(labels, dtype=float)
    m = np.asarray(margins, dtype=float)
    return float(np.mean(np.logaddexp(0.0, m) - y * m))


def logistic_grad_hess(margin, label):
    """First and second derivative of the log-loss w.r.t. the margin."""
    p = sigmoid(margin)
    y = np.asarray(label, dtype=float)
    if np.any((y != 0) & (y != 1)):
        raise ModelError("labels must be 0 or 1")
    g = p - y
    h = p * (1.0 - p)
    if np.ndim(g) == 0:
        return float(g), float(h)
    return g, h


def leaf_weight(acc: GradHess, reg_lambda: float) -> float:
    denom = acc.hess + reg_lambda
    if denom <= 0:
        raise ModelError(f"degenerate leaf: hessian sum + lambda = {denom}")
    return -acc.grad / denom + 0.0


def _score(G, H, lam):
    return G * G / (H + lam)


def split_gain(left: GradHess, right: GradHess, reg_lambda: float, gamma: float) -> float:
    G = left.grad + right.grad
    H = left.hess + right.hess
    reduction = _score(left.grad, left.hess, reg_lambda) + _score(right.grad, right.hess, reg_lambda) - _score(
        G, H, reg_lambda
    )
    return 0.5 * reduction - gamma


class _Bins:
    """Per-column rank codes so split search can aggregate with bincount.

    Codes of feature f occupy [offsets[f], offsets[f+1]) and are ordered by
    value, so the flat code order is (feature, value) lexicographic.
    """

    def __init__(self, X: np.ndarray):
        self.n_features = X.shape[1]
        codes = np.empty(X.shape, dtype=np.int64)
        uniques = []
        offset = 0
        offsets = [0]
        for f in range(self.n_features):
            u, inv = np.unique(X[:, f], return_inverse=True)
            codes[:, f] = inv.reshape(-1) + offset
            uniques.append(u)
            offset += u.size
            offsets.append(offset)
        self.codes = codes
        self.values = np.concatenate(uniques) if uniques else np.empty(0)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.feature_of = np.repeat(np.arange(self.n_features), np.diff(self.offsets))
        self.n_bins = offset


def _best_split(bins: _Bins, g, h, rows, config: TrainConfig) -> Split | None:
    m = rows.size
    mc = config.min_child_rows
    if m < 2 * mc or bins.n_features == 0:
        return None
    n = bins.n_features
    gr = g[rows]
    hr = h[rows]
    flat = bins.codes[rows].ravel()
    G = np.bincount(flat, weights=np.repeat(gr, n), minlength=bins.n_bins)
    H = np.bincount(flat, weights=np.repeat(hr, n), minlength=bins.n_bins)
    C = np.bincount(flat, minlength=bins.n_bins)

    present = np.flatnonzero(C)
    same = bins.feature_of[present[:-1]] == bins.feature_of[present[1:]]
    k = present[:-1][same]
    nxt = present[1:][same]
    if k.size == 0:
        return None

    start = bins.offsets[bins.feature_of[k]]
    cG = np.concatenate(([0.0], np.cumsum(G)))
    cH = np.concatenate(([0.0], np.cumsum(H)))
    cC = np.concatenate(([0], np.cumsum(C)))
    GL = cG[k + 1] - cG[start]
    HL = cH[k + 1] - cH[start]
    CL = cC[k + 1] - cC[start]
    Gt = float(np.sum(gr))
    Ht = float(np.sum(hr))
    GR = Gt - GL
    HR = Ht - HL
    lam = config.reg_lambda
    gain = 0.5 * (_score(GL, HL, lam) + _score(GR, HR, lam) - _score(Gt, Ht, lam)) - config.gamma
    gain = np.where((CL >= mc) & (m - CL >= mc), gain, -np.inf)

    best = float(gain.max())
    if not best > 0:
        return None
    tol = GAIN_TIE_RTOL * max(1.0, abs(best))
    i = int(np.flatnonzero((gain >= best - tol) & (gain > 0))[0])

    lo, hi = bins.values[k[i]], bins.values[nxt[i]]
    thr = 0.5 * (lo + hi)
    if not lo < thr <= hi:
        thr = hi
    return Split(
        feature=int(bins.feature_of[k[i]]),
        threshold=float(thr),
        gain=float(gain[i]),
        left=GradHess(float(GL[i]), float(HL[i]), int(CL[i])),
        right=GradHess(float(GR[i]), float(HR[i]), int(m - CL[i])),
    )


def find_best_split(rows, X, g, h, config: TrainConfig = TrainConfig()) -> Split | None:
    """Best exact-greedy split of ``rows``, or None if no split has positive gain.

    Rows with ``x[feature] < threshold`` go left.
    """
    X = np.asarray(X, dtype=float)
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise ModelError("cannot split an empty row set")
    return _best_split(_Bins(X), np.asarray(g, float), np.asarray(h, float), rows, config)


@dataclass
class DecisionTree:
    """Array-backed binary tree; node 0 is the root, children in preorder.

    Leaves have ``feature == -1``.  Every node keeps its gradient/hessian
    sums and training cover so pruning and explanation need no data.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def features_used(self) -> list[int]:
        return sorted({int(f) for f in self.feature if f >= 0})

    def depth(self, node: int = 0) -> int:
        if self.is_leaf(node):
            return 0
        return 1 + max(self.depth(int(self.left[node])), self.depth(int(self.right[node])))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] < self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
            "grad": self.grad.tolist(),
            "hess": self.hess.tolist(),
            "gain": self.gain.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        ints = {"feature", "left", "right", "cover"}
        return cls(**{k: np.asarray(d[k], dtype=np.int64 if k in ints else float) for k in cls.__dataclass_fields__})

    @classmethod
    def from_nodes(cls, nodes: list[dict]) -> "DecisionTree":
        """Build from a preorder list of node dicts (missing keys default)."""
        cols = {k: [] for k in cls.__dataclass_fields__}
        for nd in nodes:
            cols["feature"].append(nd.get("feature", -1))
            cols["threshold"].append(nd.get("threshold", 0.0))
            cols["left"].append(nd.get("left", -1))
            cols["right"].append(nd.get("right", -1))
            cols["value"].append(nd.get("value", 0.0))
            cols["cover"].append(nd.get("cover", 0))
            cols["grad"].append(nd.get("grad", 0.0))
            cols["hess"].append(nd.get("hess", 0.0))
            cols["gain"].append(nd.get("gain", 0.0))
        return cls.from_dict(cols)

    @staticmethod
    def leaf(value: float, cover: int = 1) -> "DecisionTree":
        return DecisionTree.from_nodes([{"value": value, "cover": cover}])


def grow_tree(X, g, h, config: TrainConfig = TrainConfig(), _bins: _Bins | None = None) -> DecisionTree:
    """Depth-first growth until max_depth, no positive-gain split, or min_child_rows."""
    X = np.asarray(X, dtype=float)
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    if not (g.shape == h.shape == (X.shape[0],)):
        raise ModelError("gradient/hessian arrays must have one entry per row")
    bins = _bins if _bins is not None else _Bins(X)
    nodes: list[dict] = []

    def build(rows: np.ndarray, depth: int) -> int:
        acc = GradHess(float(np.sum(g[rows])), float(np.sum(h[rows])), int(rows.size))
        idx = len(nodes)
        node = {"value": leaf_weight(acc, config.reg_lambda), "cover": acc.rows, "grad": acc.grad, "hess": acc.hess}
        nodes.append(node)
        split = _best_split(bins, g, h, rows, config) if depth < config.max_depth else None
        if split is None:
            return idx
        go_left = X[rows, split.feature] < split.threshold
        node.update(feature=split.feature, threshold=split.threshold, gain=split.gain)
        node["left"] = build(rows[go_left], depth + 1)
        node["right"] = build(rows[~go_left], depth + 1)
        return idx

    build(np.arange(X.shape[0]), 0)
    return DecisionTree.from_nodes(nodes)


def prune_tree(tree: DecisionTree, gamma: float, reg_lambda: float = 1.0) -> DecisionTree:
    """Collapse, bottom-up, every internal node whose recomputed gain is <= 0.

    A collapsed node becomes a leaf whose weight comes from the merged
    child accumulators.  Applying the function twice changes nothing.
    """
    nodes: list[dict] = []

    def walk(i: int) -> tuple[int, GradHess]:
        idx = len(nodes)
        nd = {"value": float(tree.value[i]), "cover": int(tree.cover[i]), "grad": float(tree.grad[i]),
              "hess": float(tree.hess[i])}
        nodes.append(nd)
        if tree.is_leaf(i):
            return idx, GradHess(nd["grad"], nd["hess"], nd["cover"])
        li, lacc = walk(int(tree.left[i]))
        ri, racc = walk(int(tree.right[i]))
        gain = split_gain(lacc, racc, reg_lambda, gamma)
        if gain <= 0:
            del nodes[idx + 1:]
            merged = lacc + racc
            nd.update(value=leaf_weight(merged, reg_lambda), grad=merged.grad, hess=merged.hess, cover=merged.rows)
            return idx, merged
        nd.update(feature=int(tree.feature[i]), threshold=float(tree.threshold[i]), gain=gain, left=li, right=ri)
        return idx, GradHess(nd["grad"], nd["hess"], nd["cover"])

    walk(0)
    return DecisionTree.from_nodes(nodes)


@dataclass
class Ensemble:
    trees: list[DecisionTree]
    base_margin: float = 0.0
    learning_rate: float = 0.3
    feature_names: list[str] = field(default_factory=list)
    config: TrainConfig | None = None

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _check(self, X) -> tuple[np.ndarray, bool]:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ModelError(f"expected rows with {self.n_features} features, got shape {X.shape}")
        return X, single

    def tree_outputs(self, X) -> np.ndarray:
        """Unscaled per-tree leaf outputs, shape (rows, trees)."""
        X, _ = self._check(X)
        out = np.zeros((X.shape[0], len(self.trees)))
        for t, tree in enumerate(self.trees):
            out[:, t] = tree.predict(X)
        return out

    def predict_margin(self, X):
        X, single = self._check(X)
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.predict(X)
        margin = self.base_margin + self.learning_rate * total
        return float(margin[0]) if single else margin

    def predict_proba(self, X):
        return sigmoid(self.predict_margin(X))

    def staged_margin(self, X) -> Iterator[np.ndarray]:
        """Margins after 0, 1, ..., len(trees) rounds."""
        X, _ = self._check(X)
        total = np.zeros(X.shape[0])
        yield self.base_margin + self.learning_rate * total
        for tree in self.trees:
            total += tree.predict(X)
            yield self.base_margin + self.learning_rate * total

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": "gbt",
            "feature_names": list(self.feature_names),
            "base_margin": self.base_margin,
            "learning_rate": self.learning_rate,
            "config": self.config.to_dict() if self.config else None,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ensemble":
        if d.get("format") != MODEL_FORMAT or d.get("kind") != "gbt":
            raise ModelError("not a boosted-tree model document")
        if d.get("version") != MODEL_VERSION:
            raise ModelError(f"unsupported model version {d.get('version')}")
        return cls(
            trees=[DecisionTree.from_dict(t) for t in d["trees"]],
            base_margin=float(d["base_margin"]),
            learning_rate=float(d["learning_rate"]),
            feature_names=list(d["feature_names"]),
            config=TrainConfig.from_dict(d["config"]) if d.get("config") else None,
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Ensemble":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_training_data(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ModelError(f"feature matrix {X.shape} and labels {y.shape} do not align")
    if not np.all(np.isfinite(X)):
        raise ModelError("feature matrix contains missing or non-finite values")
    if np.any((y != 0) & (y != 1)):
        raise ModelError("labels must be 0 or 1")
    if np.unique(y).size < 2:
        raise ModelError("training labels contain a single class")
    return X, y.astype(np.int64)


def train(X, y, config: TrainConfig = TrainConfig(), feature_names=None) -> Ensemble:
    X, y = _check_training_data(X, y)
    names = list(feature_names) if feature_names is not None else [f"f{i}" for i in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise ModelError("feature_names length does not match the matrix")
    bins = _Bins(X)
    margins = np.zeros(X.shape[0])
    trees = []
    for _ in range(config.num_rounds):
        g, h = logistic_grad_hess(margins, y)
        tree = grow_tree(X, g, h, config, _bins=bins)
        tree = prune_tree(tree, config.gamma, config.reg_lambda)
        trees.append(tree)
        margins = margins + config.learning_rate * tree.predict(X)
    return Ensemble(trees, 0.0, config.learning_rate, names, config)


def predict_margin(ensemble: Ensemble, row):
    return ensemble.predict_margin(row)


def predict_proba(ensemble: Ensemble, row):
    return ensemble.predict_proba(row)
