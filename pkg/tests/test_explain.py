import itertools
import json
import math

import numpy as np
import pytest
from conftest import random_ensemble, random_row
from hypothesis import given, settings
from hypothesis import strategies as st

from boostlens.errors import ModelError
from boostlens.explain import (
    base_value,
    coalition_value,
    explain_batch,
    explanation_document,
    interactions_exact,
    shap_interactions,
    shap_values,
    shapley_exact,
    write_phi_csv,
)
from boostlens.gbt import DecisionTree, Ensemble, TrainConfig, train


# ------------------------------------------------------------ independent oracles


def oracle_value(ens: Ensemble, row, S) -> float:
    """Cover-weighted expectation written from scratch over the node arrays."""
    total = 0.0
    for t in ens.trees:
        stack = [(0, 1.0)]
        while stack:
            i, w = stack.pop()
            if t.feature[i] < 0:
                total += w * t.value[i]
                continue
            l, r = t.left[i], t.right[i]
            if t.feature[i] in S:
                stack.append((l if row[t.feature[i]] < t.threshold[i] else r, w))
            else:
                c = t.cover[l] + t.cover[r]
                stack.append((l, w * t.cover[l] / c))
                stack.append((r, w * t.cover[r] / c))
    return ens.base_margin + ens.learning_rate * total


def oracle_shapley_by_permutation(v, n):
    """Average marginal contribution over all n! orderings."""
    phi = np.zeros(n)
    perms = list(itertools.permutations(range(n)))
    for p in perms:
        S = set()
        for i in p:
            before = v(frozenset(S))
            S.add(i)
            phi[i] += v(frozenset(S)) - before
    return phi / len(perms)


# ------------------------------------------------------------ hand cases


def stump(feature=0, threshold=0.5, lo=-1.0, hi=1.0, c_lo=1, c_hi=1):
    return DecisionTree.from_nodes(
        [
            {"feature": feature, "threshold": threshold, "left": 1, "right": 2, "cover": c_lo + c_hi},
            {"value": lo, "cover": c_lo},
            {"value": hi, "cover": c_hi},
        ]
    )


def test_single_stump_hand_values():
    # Covers 3:1, leaves -1 / +1: base = (3*-1 + 1*1)/4 = -0.5; row goes right, phi = 1 - (-0.5) = 1.5
    ens = Ensemble([stump(c_lo=3, c_hi=1)], learning_rate=1.0, feature_names=["a", "b"])
    sv = shap_values(ens, np.array([0.9, 0.0]))
    assert sv.base == pytest.approx(-0.5)
    assert sv.phi.tolist() == [1.5, 0.0]


def test_coalition_value_endpoints(rng):
    ens = random_ensemble(rng, 4, 3, 3)
    row = random_row(rng, 4)
    assert coalition_value(ens, row, range(4)) == pytest.approx(float(ens.predict_margin(row)), abs=1e-12)
    assert coalition_value(ens, row, []) == pytest.approx(oracle_value(ens, row, set()), abs=1e-12)
    with pytest.raises(ModelError):
        coalition_value(ens, row, [7])


def test_brute_force_cap():
    with pytest.raises(ModelError):
        shapley_exact(lambda S: 0.0, 16)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_shap_values_match_permutation_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    ens = random_ensemble(rng, n, int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    row = random_row(rng, n)
    want = oracle_shapley_by_permutation(lambda S: oracle_value(ens, row, S), n)
    got = shap_values(ens, row)
    np.testing.assert_allclose(got.phi, want, atol=1e-10)
    assert got.total == pytest.approx(float(ens.predict_margin(row)), abs=1e-10)


def test_shapley_exact_on_a_known_game():
    # Glove game: players 0,1 hold left gloves, 2 a right glove; a pair is worth 1.
    def v(S):
        return float(min(len(S & {0, 1}), len(S & {2})))

    sv = shapley_exact(v, 3)
    np.testing.assert_allclose(sv.phi, [1 / 6, 1 / 6, 2 / 3], atol=1e-15)


def test_interaction_on_pure_product_game():
    # v(S) = 1 iff {0, 1} is a subset of S, 3 players.  The Shapley interaction
    # index of (0, 1) is 1; the printed normalization divides by n = 3.
    def v(S):
        return float({0, 1} <= S)

    printed = interactions_exact(v, 3, "printed")
    shap = interactions_exact(v, 3, "shap")
    assert printed[0, 1] == pytest.approx(1 / 3, abs=1e-15)
    assert shap[0, 1] == pytest.approx(1 / 2, abs=1e-15)
    assert printed[0, 2] == 0.0 and printed[0, 0] == 0.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), norm=st.sampled_from(["printed", "shap"]))
def test_interactions_match_brute_force(seed, norm):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    ens = random_ensemble(rng, n, int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    row = random_row(rng, n)
    got = shap_interactions(ens, row, norm).phi2
    want = interactions_exact(lambda S: oracle_value(ens, row, S), n, norm)
    off = ~np.eye(n, dtype=bool)
    np.testing.assert_allclose(got[off], want[off], atol=1e-10)
    np.testing.assert_array_equal(got, got.T)
    np.testing.assert_allclose(got.sum(axis=1), shap_values(ens, row).phi, atol=1e-10)


def test_unknown_normalization():
    ens = Ensemble([stump()], feature_names=["a"])
    with pytest.raises(ModelError):
        shap_interactions(ens, np.array([0.1]), "bogus")


# ------------------------------------------------------------ batch route


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), norm=st.sampled_from(["printed", "shap"]))
def test_batch_matches_per_row_routes(seed, norm):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    ens = random_ensemble(rng, n, int(rng.integers(1, 5)), int(rng.integers(0, 4)))
    X = np.array([random_row(rng, n) for _ in range(7)])
    batch = explain_batch(ens, X, interactions=True, normalization=norm, chunk_rows=3)
    for i, row in enumerate(X):
        sv = shap_values(ens, row)
        assert batch.base == pytest.approx(sv.base, abs=1e-12)
        np.testing.assert_allclose(batch.phi[i], sv.phi, atol=1e-12)
        np.testing.assert_allclose(batch.phi2[i], shap_interactions(ens, row, norm).phi2, atol=1e-12)
    np.testing.assert_allclose(batch.base + batch.phi.sum(axis=1), ens.predict_margin(X), atol=1e-12)


def test_batch_independent_of_threads(rng):
    X = rng.normal(size=(300, 4))
    y = (X[:, 0] * X[:, 1] > 0).astype(int)
    ens = train(X, y, TrainConfig(num_rounds=10))
    a = explain_batch(ens, X, interactions=True, threads=1, chunk_rows=64)
    b = explain_batch(ens, X, interactions=True, threads=4, chunk_rows=64)
    assert np.array_equal(a.phi, b.phi) and np.array_equal(a.phi2, b.phi2)


def test_trained_model_local_accuracy(rng):
    X = rng.integers(0, 5, size=(200, 6)).astype(float)
    y = (X[:, 0] + X[:, 1] > 4).astype(int)
    ens = train(X, y, TrainConfig(num_rounds=20, max_depth=3))
    e = explain_batch(ens, X)
    assert np.max(np.abs(e.base + e.phi.sum(axis=1) - e.margins)) < 1e-9
    used = {f for t in ens.trees for f in t.features_used()}
    unused = [f for f in range(6) if f not in used]
    assert np.all(e.phi[:, unused] == 0.0)


def test_base_value_is_mean_prediction(rng):
    X = rng.normal(size=(50, 2))
    ens = train(X, (X[:, 0] > 0).astype(int), TrainConfig(num_rounds=5))
    bv = base_value(ens, X)
    assert bv.margin == pytest.approx(float(np.mean(ens.predict_margin(X))))
    assert 0 < bv.probability < 1


def test_explanation_document_and_csv(rng, tmp_path):
    ens = random_ensemble(rng, 3, 2, 2)
    X = np.array([random_row(rng, 3) for _ in range(4)])
    e = explain_batch(ens, X, interactions=True)
    doc = explanation_document(e, ["a", "b", "c"], X, labels=[0, 1, 1, 0], row_ids=[10, 11, 12, 13])
    doc = json.loads(json.dumps(doc))
    assert doc["units"] == "log-odds" and doc["feature_names"] == ["a", "b", "c"]
    r = doc["rows"][2]
    assert r["row_id"] == 12 and r["label"] == 1
    assert doc["base"]["margin"] + sum(r["phi"]) == pytest.approx(r["margin"], abs=1e-12)
    assert len(r["phi2"]) == 3
    assert doc["base"]["probability"] == pytest.approx(1 / (1 + math.exp(-doc["base"]["margin"])))
    path = tmp_path / "phi.csv"
    write_phi_csv(doc, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "row,row_id,base,phi_a,phi_b,phi_c" and len(lines) == 5


def test_wrong_width_rejected(rng):
    ens = random_ensemble(rng, 3, 1, 2)
    with pytest.raises(ModelError):
        explain_batch(ens, np.zeros((2, 4)))
    with pytest.raises(ModelError):
        shap_values(ens, np.zeros(2))
