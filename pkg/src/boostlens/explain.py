"""Exact Shapley attributions and pairwise interaction values for ensembles.

The coalition value of a feature set S for one row is the path-dependent
expectation of the ensemble margin: inside each tree, a split on a feature
in S follows the row, any other split averages its children weighted by
their training covers.

Three routes compute the same numbers:

* ``shapley_exact`` / ``interactions_exact`` enumerate all 2^n coalitions
  of an arbitrary value function (the reference).
* ``shap_values`` / ``shap_interactions`` enumerate, tree by tree, only the
  coalitions of the features that tree uses.
* ``explain_batch`` splits every tree into one product game per leaf and
  tabulates each leaf's attributions over the binary patterns a row can
  produce on that leaf's path.  This is the vectorized path used for
  whole datasets.

Interaction values follow ``|S|!(n-|S|-2)!/n!`` by default ("printed");
``normalization="shap"`` switches to the ``|S|!(n-|S|-2)!/(2(n-1)!)``
convention.  The diagonal holds the residual main effect so that every row
of the interaction matrix sums to the feature's Shapley value.
"""

from __future__ import annotations

import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from math import factorial
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import ModelError
from .gbt import DecisionTree, Ensemble, sigmoid

NORMALIZATIONS = ("printed", "shap")
BRUTE_FORCE_CAP = 15
TREE_FEATURE_CAP = 20
PATH_FEATURE_CAP = 10


@dataclass(frozen=True)
class ShapVector:
    phi: np.ndarray
    base: float

    @property
    def total(self) -> float:
        return self.base + float(np.sum(self.phi))


@dataclass(frozen=True)
class InteractionMatrix:
    phi2: np.ndarray
    normalization: str = "printed"

    @property
    def main_effects(self) -> np.ndarray:
        return np.diag(self.phi2).copy()


@dataclass(frozen=True)
class BaseValue:
    margin: float
    probability: float


def _pair_scale(n: int, normalization: str) -> float:
    """Factor turning the Shapley interaction index into the reported value."""
    if normalization == "printed":
        return 1.0 / n
    if normalization == "shap":
        return 0.5
    raise ModelError(f"unknown interaction normalization {normalization!r}; use one of {NORMALIZATIONS}")


# ------------------------------------------------------------ coalition value


def _tree_value(tree: DecisionTree, row: np.ndarray, S) -> float:
    def walk(i: int) -> float:
        if tree.feature[i] < 0:
            return float(tree.value[i])
        lc, rc = int(tree.left[i]), int(tree.right[i])
        if int(tree.feature[i]) in S:
            return walk(lc) if row[tree.feature[i]] < tree.threshold[i] else walk(rc)
        cl, cr = float(tree.cover[lc]), float(tree.cover[rc])
        return (cl * walk(lc) + cr * walk(rc)) / (cl + cr)

    return walk(0)


def coalition_value(ensemble: Ensemble, row, S: Iterable[int]) -> float:
    """Expected margin when only the features in ``S`` are known."""
    row = np.asarray(row, dtype=float)
    if row.shape != (ensemble.n_features,):
        raise ModelError(f"row must have {ensemble.n_features} features")
    S = frozenset(int(i) for i in S)
    if any(not 0 <= i < ensemble.n_features for i in S):
        raise ModelError(f"coalition {sorted(S)} outside 0..{ensemble.n_features - 1}")
    total = sum(_tree_value(t, row, S) for t in ensemble.trees)
    return ensemble.base_margin + ensemble.learning_rate * total


# ------------------------------------------------------------ brute force


def shapley_exact(vfn: Callable[[frozenset], float], n: int, cap: int = BRUTE_FORCE_CAP) -> ShapVector:
    """Shapley values of the game ``vfn`` on n players by full enumeration."""
    if n > cap:
        raise ModelError(f"{n} players exceeds the brute-force cap of {cap}")
    values = {}
    for size in range(n + 1):
        for S in itertools.combinations(range(n), size):
            values[frozenset(S)] = float(vfn(frozenset(S)))
    phi = np.zeros(n)
    for i in range(n):
        others = [j for j in range(n) if j != i]
        for size in range(n):
            w = factorial(size) * factorial(n - size - 1) / factorial(n)
            for S in itertools.combinations(others, size):
                S = frozenset(S)
                phi[i] += w * (values[S | {i}] - values[S])
    return ShapVector(phi, values[frozenset()])


def interactions_exact(
    vfn: Callable[[frozenset], float], n: int, normalization: str = "printed", cap: int = BRUTE_FORCE_CAP
) -> np.ndarray:
    """Off-diagonal pairwise interaction values by full enumeration (diagonal 0)."""
    if n > cap:
        raise ModelError(f"{n} players exceeds the brute-force cap of {cap}")
    if normalization == "printed":
        denom = factorial(n)
    elif normalization == "shap":
        denom = 2 * factorial(n - 1)
    else:
        raise ModelError(f"unknown interaction normalization {normalization!r}")
    cache: dict[frozenset, float] = {}

    def v(S):
        if S not in cache:
            cache[S] = float(vfn(S))
        return cache[S]

    out = np.zeros((n, n))
    for i, j in itertools.combinations(range(n), 2):
        rest = [k for k in range(n) if k not in (i, j)]
        acc = 0.0
        for size in range(n - 1):
            w = factorial(size) * factorial(n - size - 2) / denom
            for S in itertools.combinations(rest, size):
                S = frozenset(S)
                acc += w * (v(S | {i, j}) - v(S | {i}) - v(S | {j}) + v(S))
        out[i, j] = out[j, i] = acc
    return out


# ------------------------------------------------------------ per-tree enumeration


@lru_cache(maxsize=None)
def _subset_tables(k: int):
    """Bitmasks over k players, their sizes, and Shapley/SII weights."""
    masks = np.arange(1 << k)
    sizes = np.array([bin(m).count("1") for m in masks])
    w1 = np.array([factorial(s) * factorial(k - s - 1) / factorial(k) if s < k else 0.0 for s in range(k + 1)])
    w2 = np.array(
        [factorial(s) * factorial(k - s - 2) / factorial(k - 1) if s <= k - 2 else 0.0 for s in range(k + 1)]
    )
    return masks, sizes, w1, w2


def _tree_value_table(tree: DecisionTree, row: np.ndarray, players: list[int]) -> np.ndarray:
    """v_t(S) for every S over ``players``, indexed by bitmask."""
    masks = np.arange(1 << len(players))
    bit = {f: j for j, f in enumerate(players)}

    def walk(i: int) -> np.ndarray:
        if tree.feature[i] < 0:
            return np.full(masks.size, float(tree.value[i]))
        f = int(tree.feature[i])
        lc, rc = int(tree.left[i]), int(tree.right[i])
        lv, rv = walk(lc), walk(rc)
        cl, cr = float(tree.cover[lc]), float(tree.cover[rc])
        known = ((masks >> bit[f]) & 1).astype(bool)
        followed = lv if row[f] < tree.threshold[i] else rv
        return np.where(known, followed, (cl * lv + cr * rv) / (cl + cr))

    return walk(0)


def _shapley_from_table(v: np.ndarray, k: int) -> np.ndarray:
    masks, sizes, w1, _ = _subset_tables(k)
    phi = np.zeros(k)
    for j in range(k):
        sel = masks[(masks >> j) & 1 == 0]
        phi[j] = np.sum(w1[sizes[sel]] * (v[sel | (1 << j)] - v[sel]))
    return phi


def _sii_from_table(v: np.ndarray, k: int) -> np.ndarray:
    masks, sizes, _, w2 = _subset_tables(k)
    out = np.zeros((k, k))
    for a, b in itertools.combinations(range(k), 2):
        sel = masks[((masks >> a) & 1 == 0) & ((masks >> b) & 1 == 0)]
        ba, bb = 1 << a, 1 << b
        d = v[sel | ba | bb] - v[sel | ba] - v[sel | bb] + v[sel]
        out[a, b] = out[b, a] = np.sum(w2[sizes[sel]] * d)
    return out


def _check_row(ensemble: Ensemble, row) -> np.ndarray:
    row = np.asarray(row, dtype=float)
    if row.shape != (ensemble.n_features,):
        raise ModelError(f"row must have {ensemble.n_features} features, got shape {row.shape}")
    return row


def _tree_players(tree: DecisionTree, cap: int) -> list[int]:
    players = tree.features_used()
    if len(players) > cap:
        raise ModelError(f"tree uses {len(players)} distinct features, above the cap of {cap}")
    return players


def shap_values(ensemble: Ensemble, row, cap: int = TREE_FEATURE_CAP) -> ShapVector:
    row = _check_row(ensemble, row)
    phi = np.zeros(ensemble.n_features)
    base = 0.0
    for tree in ensemble.trees:
        players = _tree_players(tree, cap)
        v = _tree_value_table(tree, row, players)
        base += v[0]
        if players:
            phi[players] += _shapley_from_table(v, len(players))
    lr = ensemble.learning_rate
    return ShapVector(lr * phi, ensemble.base_margin + lr * base)


def shap_interactions(
    ensemble: Ensemble, row, normalization: str = "printed", cap: int = TREE_FEATURE_CAP
) -> InteractionMatrix:
    row = _check_row(ensemble, row)
    n = ensemble.n_features
    scale = _pair_scale(n, normalization)
    phi = np.zeros(n)
    off = np.zeros((n, n))
    for tree in ensemble.trees:
        players = _tree_players(tree, cap)
        if not players:
            continue
        v = _tree_value_table(tree, row, players)
        k = len(players)
        phi[players] += _shapley_from_table(v, k)
        if k > 1:
            off[np.ix_(players, players)] += scale * _sii_from_table(v, k)
    lr = ensemble.learning_rate
    phi *= lr
    off *= lr
    phi2 = off.copy()
    phi2[np.diag_indices(n)] = phi - off.sum(axis=1)
    return InteractionMatrix(phi2, normalization)


def base_value(ensemble: Ensemble, X) -> BaseValue:
    """Mean prediction over ``X`` on the margin and probability scales."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ModelError("base value needs at least one row")
    margins = ensemble.predict_margin(X)
    return BaseValue(float(np.mean(margins)), float(np.mean(sigmoid(margins))))


# ------------------------------------------------------------ leaf-path batch


@dataclass
class _LeafGame:
    weight: float
    empty: float  # v(empty set): weight times the product of cover fractions
    features: list[int]  # distinct features on the root-to-leaf path
    tests: list[list[tuple[float, bool]]]  # per feature: (threshold, went_left) along the path
    phi_table: np.ndarray  # (2^k, k) attributions per row pattern
    sii_table: np.ndarray | None  # (2^k, k, k) interaction index per row pattern


@lru_cache(maxsize=None)
def _leaf_coefficients(k: int):
    """Linear maps from v(S) (over 2^k subsets) to Shapley values / SII."""
    masks, sizes, w1, w2 = _subset_tables(k)
    cphi = np.zeros((masks.size, k))
    for i in range(k):
        has = (masks >> i) & 1 == 1
        cphi[has, i] = w1[sizes[has] - 1]
        cphi[~has, i] = -w1[sizes[~has]]
    pairs = list(itertools.combinations(range(k), 2))
    csii = np.zeros((masks.size, len(pairs)))
    for p, (a, b) in enumerate(pairs):
        ia = (masks >> a) & 1
        ib = (masks >> b) & 1
        rest = sizes - ia - ib
        sign = np.where(ia == ib, 1.0, -1.0)
        csii[:, p] = sign * w2[rest]
    bits = ((masks[:, None] >> np.arange(k)) & 1).astype(bool)
    return bits, cphi, pairs, csii


def _leaf_games(tree: DecisionTree, with_pairs: bool) -> list[_LeafGame]:
    games = []

    def walk(i: int, path: list[tuple[int, float, bool, float]]):
        if tree.feature[i] < 0:
            games.append(_build_leaf(float(tree.value[i]), path, with_pairs))
            return
        f, thr = int(tree.feature[i]), float(tree.threshold[i])
        lc, rc = int(tree.left[i]), int(tree.right[i])
        cl, cr = float(tree.cover[lc]), float(tree.cover[rc])
        walk(lc, path + [(f, thr, True, cl / (cl + cr))])
        walk(rc, path + [(f, thr, False, cr / (cl + cr))])

    walk(0, [])
    return games


def _build_leaf(weight: float, path, with_pairs: bool) -> _LeafGame:
    features: list[int] = []
    tests: list[list[tuple[float, bool]]] = []
    fractions: list[float] = []
    for f, thr, went_left, frac in path:
        if f not in features:
            features.append(f)
            tests.append([])
            fractions.append(1.0)
        j = features.index(f)
        tests[j].append((thr, went_left))
        fractions[j] *= frac
    k = len(features)
    if k > PATH_FEATURE_CAP:
        raise ModelError(f"a leaf path uses {k} distinct features; the batch explainer supports {PATH_FEATURE_CAP}")
    if k == 0:
        return _LeafGame(weight, weight, [], [], np.zeros((1, 0)), None)
    bits, cphi, pairs, csii = _leaf_coefficients(k)
    # value[p, S] = weight * prod_f (f in S ? a_f(p) : b_f) with a_f(p) the pattern bit
    b = np.asarray(fractions)
    factors = np.where(bits[None, :, :], bits[:, None, :].astype(float), b[None, None, :])
    value = weight * np.prod(factors, axis=2)
    phi_table = value @ cphi
    sii_table = None
    if with_pairs and k > 1:
        flat = value @ csii
        sii_table = np.zeros((bits.shape[0], k, k))
        for p, (a, c) in enumerate(pairs):
            sii_table[:, a, c] = sii_table[:, c, a] = flat[:, p]
    return _LeafGame(weight, weight * float(np.prod(b)), features, tests, phi_table, sii_table)


def _explain_rows(games_per_tree, X: np.ndarray, n: int, with_pairs: bool, scale: float):
    M = X.shape[0]
    phi = np.zeros((M, n))
    off = np.zeros((M, n, n)) if with_pairs else None
    for games in games_per_tree:
        for game in games:
            if not game.features:
                continue
            pattern = np.zeros(M, dtype=np.int64)
            for j, (f, tests) in enumerate(zip(game.features, game.tests)):
                ok = np.ones(M, dtype=bool)
                for thr, went_left in tests:
                    ok &= (X[:, f] < thr) == went_left
                pattern |= ok.astype(np.int64) << j
            phi[:, game.features] += game.phi_table[pattern]
            if with_pairs and game.sii_table is not None:
                idx = np.ix_(np.arange(M), game.features, game.features)
                off[idx] += scale * game.sii_table[pattern]
    return phi, off


@dataclass
class BatchExplanation:
    base: float
    phi: np.ndarray
    phi2: np.ndarray | None
    margins: np.ndarray
    normalization: str = "printed"


def explain_batch(
    ensemble: Ensemble,
    X,
    interactions: bool = False,
    normalization: str = "printed",
    threads: int = 1,
    chunk_rows: int = 512,
) -> BatchExplanation:
    """Shapley values (and optionally interaction matrices) for every row.

    Rows are split into fixed chunks written to pre-assigned slots, so the
    result does not depend on ``threads``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = ensemble.n_features
    if X.shape[1] != n:
        raise ModelError(f"expected {n} features, got {X.shape[1]}")
    scale = _pair_scale(n, normalization)
    games = [_leaf_games(t, interactions) for t in ensemble.trees]
    base = sum(g.empty for gs in games for g in gs)
    M = X.shape[0]
    phi = np.zeros((M, n))
    off = np.zeros((M, n, n)) if interactions else None

    def work(lo: int):
        hi = min(lo + chunk_rows, M)
        p, o = _explain_rows(games, X[lo:hi], n, interactions, scale)
        phi[lo:hi] = p
        if interactions:
            off[lo:hi] = o

    starts = range(0, M, chunk_rows)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for s in starts:
            work(s)

    lr = ensemble.learning_rate
    phi *= lr
    phi2 = None
    if interactions:
        off *= lr
        phi2 = off
        diag = phi - off.sum(axis=2)
        rows = np.arange(M)[:, None]
        cols = np.arange(n)[None, :]
        phi2[rows, cols, cols] = diag
    return BatchExplanation(ensemble.base_margin + lr * base, phi, phi2, ensemble.predict_margin(X), normalization)


# ------------------------------------------------------------ export


def explanation_document(
    expl: BatchExplanation,
    feature_names,
    X,
    labels=None,
    row_ids=None,
    mean_prediction: BaseValue | None = None,
) -> dict:
    X = np.asarray(X, dtype=float)
    rows = []
    for i in range(X.shape[0]):
        rec = {
            "row": i,
            "row_id": int(row_ids[i]) if row_ids is not None else i,
            "x": X[i].tolist(),
            "margin": float(expl.margins[i]),
            "phi": expl.phi[i].tolist(),
        }
        if labels is not None:
            rec["label"] = int(labels[i])
        if expl.phi2 is not None:
            rec["phi2"] = expl.phi2[i].tolist()
        rows.append(rec)
    doc = {
        "format": "boostlens-explanations",
        "version": 1,
        "units": "log-odds",
        "feature_names": list(feature_names),
        "base": {"margin": expl.base, "probability": float(sigmoid(expl.base))},
        "normalization": expl.normalization,
        "rows": rows,
    }
    if mean_prediction is not None:
        doc["mean_prediction"] = {"margin": mean_prediction.margin, "probability": mean_prediction.probability}
    return doc


def write_explanations_json(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc))


def write_phi_csv(doc: dict, path) -> None:
    names = doc["feature_names"]
    lines = [",".join(["row", "row_id", "base", *(f"phi_{n}" for n in names)])]
    base = repr(doc["base"]["margin"])
    for r in doc["rows"]:
        lines.append(",".join([str(r["row"]), str(r["row_id"]), base, *(repr(v) for v in r["phi"])]))
    Path(path).write_text("\n".join(lines) + "\n")
