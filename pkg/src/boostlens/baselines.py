"""Reference classifiers for the model comparison table."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ModelError
from .gbt import MODEL_FORMAT, MODEL_VERSION, Ensemble, TrainConfig, _check_training_data, sigmoid, train


@dataclass
class LinearModel:
    """L2-regularized logistic regression on internally z-scored features."""

    weights: np.ndarray
    bias: float
    l2: float
    mean: np.ndarray
    scale: np.ndarray
    loss_history: list[float] | None = None

    def _z(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.weights.size:
            raise ModelError(f"expected {self.weights.size} features, got {X.shape[1]}")
        return (X - self.mean) / self.scale

    def predict_margin(self, X) -> np.ndarray:
        return self._z(X) @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.predict_margin(X))

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": "logistic",
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "l2": self.l2,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        if d.get("kind") != "logistic":
            raise ModelError("not a logistic-regression model document")
        return cls(np.asarray(d["weights"], float), float(d["bias"]), float(d["l2"]),
                   np.asarray(d["mean"], float), np.asarray(d["scale"], float))


def logistic_objective(w: np.ndarray, b: float, Z: np.ndarray, y: np.ndarray, l2: float):
    """Loss ``(sum(log-loss) + l2/2 * |w|^2) / M`` and its gradient."""
    M = Z.shape[0]
    m = Z @ w + b
    loss = (np.sum(np.logaddexp(0.0, m) - y * m) + 0.5 * l2 * (w @ w)) / M
    r = sigmoid(m) - y
    gw = (Z.T @ r + l2 * w) / M
    gb = float(np.sum(r)) / M
    return float(loss), gw, gb


def train_logistic(X, y, l2: float = 1.0, iters: int = 500, step: float = 1.0, tol: float = 1e-9) -> LinearModel:
    """Full-batch gradient descent; a step that raises the loss is halved and retried.

    ``step`` multiplies per-block step sizes of 1/L, with L the curvature
    bound of the weights (largest eigenvalue of Z'Z/4M plus l2/M) or of the
    bias (1/4).  Without that split a large l2 would shrink the shared step
    and leave the bias crawling toward the class prior.
    """
    X, y = _check_training_data(X, y)
    if l2 < 0:
        raise ModelError("l2 must be >= 0")
    if step <= 0:
        raise ModelError("step must be > 0")
    M = X.shape[0]
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    yf = y.astype(float)
    lip_w = float(np.linalg.eigvalsh(Z.T @ Z / M).max()) / 4 + l2 / M if Z.shape[1] else 1.0
    lip_b = 0.25
    w = np.zeros(X.shape[1])
    b = 0.0
    loss, gw, gb = logistic_objective(w, b, Z, yf, l2)
    history = [loss]
    for _ in range(iters):
        while True:
            w_new, b_new = w - (step / lip_w) * gw, b - (step / lip_b) * gb
            new_loss, new_gw, new_gb = logistic_objective(w_new, b_new, Z, yf, l2)
            if new_loss <= loss or step < 1e-12:
                break
            step *= 0.5
        if new_loss > loss:
            break
        improvement = loss - new_loss
        w, b, loss, gw, gb = w_new, b_new, new_loss, new_gw, new_gb
        history.append(loss)
        if improvement < tol * max(1.0, loss):
            break
    return LinearModel(w, b, float(l2), mean, scale, history)


@dataclass
class CartModel:
    """A single tree fitted by one Newton step from a zero margin."""

    ensemble: Ensemble

    @property
    def tree(self):
        return self.ensemble.trees[0]

    def predict_margin(self, X):
        return self.ensemble.predict_margin(X)

    def predict_proba(self, X):
        return self.ensemble.predict_proba(X)

    def to_dict(self) -> dict:
        d = self.ensemble.to_dict()
        return {"format": MODEL_FORMAT, "version": MODEL_VERSION, "kind": "cart", "ensemble": d}

    @classmethod
    def from_dict(cls, d: dict) -> "CartModel":
        if d.get("kind") != "cart":
            raise ModelError("not a decision-tree model document")
        return cls(Ensemble.from_dict(d["ensemble"]))


CART_DEFAULTS = TrainConfig(num_rounds=1, learning_rate=1.0, max_depth=5, reg_lambda=1.0, gamma=0.0, min_child_rows=5)


def train_cart(X, y, config: TrainConfig = CART_DEFAULTS, feature_names=None) -> CartModel:
    cfg = config.replace(num_rounds=1, learning_rate=1.0)
    return CartModel(train(X, y, cfg, feature_names))


def model_from_dict(d: dict):
    if d.get("format") != MODEL_FORMAT:
        raise ModelError("not a boostlens model document")
    kind = d.get("kind")
    if kind == "gbt":
        return Ensemble.from_dict(d)
    if kind == "logistic":
        return LinearModel.from_dict(d)
    if kind == "cart":
        return CartModel.from_dict(d)
    raise ModelError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_model(path):
    path = Path(path)
    if not path.is_file():
        raise ModelError(f"model file not found: {path}")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(d)
