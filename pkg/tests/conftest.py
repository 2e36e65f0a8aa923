"""Shared builders for tests: random tree ensembles with consistent covers."""

import numpy as np
import pytest

from boostlens.gbt import DecisionTree, Ensemble


def random_tree(rng: np.random.Generator, n_features: int, max_depth: int, cover: int = 64) -> DecisionTree:
    """A random tree whose child covers sum to the parent cover.

    Thresholds are drawn from a small grid so rows land exactly on them
    now and then, exercising the ``x < threshold`` boundary.
    """
    nodes: list[dict] = []

    def build(depth: int, c: int) -> int:
        idx = len(nodes)
        node = {"value": float(rng.normal()), "cover": c}
        nodes.append(node)
        if depth < max_depth and c >= 2 and rng.random() < 0.8:
            left_cover = int(rng.integers(1, c))
            node["feature"] = int(rng.integers(n_features))
            node["threshold"] = float(rng.integers(1, 10)) / 10
            node["left"] = build(depth + 1, left_cover)
            node["right"] = build(depth + 1, c - left_cover)
        return idx

    build(0, cover)
    return DecisionTree.from_nodes(nodes)


def random_ensemble(rng, n_features: int, n_trees: int, max_depth: int) -> Ensemble:
    trees = [random_tree(rng, n_features, max_depth) for _ in range(n_trees)]
    return Ensemble(
        trees,
        base_margin=float(rng.normal()),
        learning_rate=float(rng.uniform(0.1, 1.0)),
        feature_names=[f"f{i}" for i in range(n_features)],
    )


def random_row(rng, n_features: int) -> np.ndarray:
    # Mix grid points (exact threshold hits) with continuous values.
    row = rng.random(n_features)
    snap = rng.random(n_features) < 0.3
    row[snap] = rng.integers(0, 11, snap.sum()) / 10
    return row


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance criteria append "PASS/FAIL name: detail" lines here; they are
# echoed at the end of the run so they show up even when output is captured.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
