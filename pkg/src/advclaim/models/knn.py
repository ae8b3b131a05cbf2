from __future__ import annotations

import numpy as np

from .base import Classifier, check_binary_train


class ConfigurationError(ValueError):
    pass


def euclidean(q: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Pairwise distances ``d(q_a, x_b) = sqrt(sum_j (q_aj - x_bj)^2)``."""
    return np.sqrt(((q[:, None, :] - x[None, :, :]) ** 2).sum(axis=2))


class KnnModel(Classifier):
    """Majority vote of the ``k`` nearest stored training rows.

    Distance ties are broken by training-row order. The score is the fraction
    of fraud votes.
    """

    family = "knn"

    def __init__(self, x, y, k: int = 5):
        x = np.asarray(x, dtype=np.float64)
        if k < 1 or k % 2 == 0:
            raise ConfigurationError(f"k must be a positive odd number, got {k}")
        if k > x.shape[0]:
            raise ConfigurationError(f"k={k} exceeds the {x.shape[0]} stored rows")
        self.x = x
        self.y = np.asarray(y, dtype=np.int64)
        self.k = k
        self.n_features = x.shape[1]

    def neighbors(self, q, chunk: int = 256) -> np.ndarray:
        q = self._check(q)
        out = np.empty((q.shape[0], self.k), dtype=np.int64)
        for s in range(0, q.shape[0], chunk):
            d = euclidean(q[s:s + chunk], self.x)
            out[s:s + chunk] = np.argsort(d, axis=1, kind="stable")[:, :self.k]
        return out

    def _proba(self, x):
        return self.y[self.neighbors(x)].mean(axis=1)

    def hyperparameters(self) -> dict:
        return {"k": self.k, "n_features": self.n_features}

    def parameters_dict(self) -> dict:
        return {"x": self.x.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_parts(cls, hyper: dict, params: dict) -> "KnnModel":
        return cls(params["x"], params["y"], hyper["k"])


def train_knn(x, y, k: int = 5) -> KnnModel:
    check_binary_train(y)
    return KnnModel(x, y, k)
