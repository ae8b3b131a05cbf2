"""Linear max-margin classifier trained in the primal.

Minimizes ``0.5 * |w|^2 + C * mean_i max(0, 1 - s_i (w.x_i + b))`` with
labels mapped to ``s_i in {-1, +1}``, by full-batch subgradient descent. The
decision function ``sign(w.x + b)`` is the same affine form as the dual
support-vector expansion; the multipliers are never materialized.
"""
from __future__ import annotations

import numpy as np

from ..numkit import Rng, sigmoid
from .base import Classifier, check_binary_train


class MarginModel(Classifier):
    family = "margin"

    def __init__(self, w, b: float = 0.0, C: float = 1.0, **extra):
        self.w = np.asarray(w, dtype=np.float64).reshape(-1)
        self.b = float(b)
        self.C = C
        self.n_features = self.w.size
        self.extra = extra

    def decision(self, x) -> np.ndarray:
        return self._check(x) @ self.w + self.b

    def _proba(self, x):
        # the sigmoid only puts the margin on the shared 0.5 threshold scale
        return sigmoid(x @ self.w + self.b)

    def hyperparameters(self) -> dict:
        return {"C": self.C, **self.extra}

    def parameters_dict(self) -> dict:
        return {"w": self.w.tolist(), "b": self.b}

    @classmethod
    def from_parts(cls, hyper: dict, params: dict) -> "MarginModel":
        return cls(params["w"], params["b"], **hyper)


def train_margin(x, y, C: float = 10.0, epochs: int = 300, lr: float = 0.05, seed: int = 0) -> MarginModel:
    """Hinge + L2 subgradient descent with a ``lr / sqrt(t)`` step schedule.

    Returns the iterate with the lowest primal objective seen, since
    subgradient steps do not decrease it monotonically.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    check_binary_train(y)
    s = np.where(y == 1, 1.0, -1.0)
    rng = Rng(seed)
    w = rng.normal(x.shape[1], 0.0, 1e-3)
    b = 0.0

    def objective(w, b):
        return 0.5 * w @ w + C * np.mean(np.maximum(0.0, 1.0 - s * (x @ w + b)))

    best = (objective(w, b), w.copy(), b)
    for t in range(1, epochs + 1):
        active = s * (x @ w + b) < 1.0
        gw = w - C * (s[active, None] * x[active]).sum(axis=0) / x.shape[0]
        gb = -C * s[active].sum() / x.shape[0]
        step = lr / np.sqrt(t)
        w = w - step * gw
        b = b - step * gb
        obj = objective(w, b)
        if obj < best[0]:
            best = (obj, w.copy(), b)
    return MarginModel(best[1], best[2], C=C, epochs=epochs, lr=lr, seed=seed)
