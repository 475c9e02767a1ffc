"""Linear soft-margin SVM trained by deterministic subgradient descent.

Used as the post-hoc classifier over frozen representations. Full-batch
subgradient steps on the regularized hinge objective with the 1/(lambda*t)
schedule and norm projection; the best iterate by objective value is kept,
so the reported objective sequence is non-increasing by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError

Array = np.ndarray


@dataclass
class LinearSvmModel:
    weights: Array
    bias: float
    regularization: float
    objective_history: list = field(default_factory=list, repr=False)


def svm_objective(weights: Array, bias: float, features: Array, labels: Array,
                  regularization: float) -> float:
    margins = labels * (features @ weights + bias)
    hinge = np.maximum(0.0, 1.0 - margins).mean()
    return float(0.5 * regularization * weights @ weights + hinge)


def fit_svm(features, labels, regularization: float = 1.0, epochs: int = 200,
            seed: int = 0) -> LinearSvmModel:
    """Fit on +/-1 labels. ``seed`` is accepted for interface stability but
    the full-batch schedule is already deterministic."""
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if features.ndim != 2 or len(labels) != features.shape[0]:
        raise UsageError("features must be (n, d) with one label per row")
    if not set(np.unique(labels)) <= {-1.0, 1.0}:
        raise UsageError("labels must be -1/+1")
    if len(np.unique(labels)) < 2:
        raise UsageError("need at least one sample per class")
    n = features.shape[0]
    lam = regularization
    w = np.zeros(features.shape[1])
    b = 0.0
    best = (svm_objective(w, b, features, labels, lam), w.copy(), b)
    history = [best[0]]
    radius = 1.0 / np.sqrt(lam)
    for t in range(1, epochs + 1):
        margins = labels * (features @ w + b)
        active = margins < 1.0
        gw = lam * w - (labels[active] @ features[active]) / n
        gb = -labels[active].sum() / n
        eta = 1.0 / (lam * t)
        w = w - eta * gw
        b = b - eta * gb
        norm = np.linalg.norm(w)
        if norm > radius:
            w = w * (radius / norm)
        obj = svm_objective(w, b, features, labels, lam)
        if obj < best[0]:
            best = (obj, w.copy(), b)
        history.append(best[0])
    return LinearSvmModel(weights=best[1], bias=best[2], regularization=lam,
                          objective_history=history)


def predict_svm(model: LinearSvmModel, features) -> Array:
    """Sign of the decision function; exact zeros break to +1."""
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[None, :]
    if features.shape[1] != model.weights.shape[0]:
        raise UsageError(
            f"feature dim {features.shape[1]} does not match model dim "
            f"{model.weights.shape[0]}")
    scores = features @ model.weights + model.bias
    return np.where(scores >= 0.0, 1, -1)
