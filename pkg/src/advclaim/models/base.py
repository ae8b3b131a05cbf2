"""Shared classifier contract."""
from __future__ import annotations

import numpy as np

from ..numkit import ShapeError, as_matrix

THRESHOLD = 0.5


class NotDifferentiable(TypeError):
    """The model family exposes no input gradient."""


class TrainingError(ValueError):
    """Training data cannot support the requested model."""


class Classifier:
    """Base for the detector families.

    Subclasses implement ``_proba`` on a validated matrix and may override
    ``input_gradient``. ``family`` is the persistence tag.
    """

    family = "abstract"
    differentiable = False
    n_features: int

    def predict_proba(self, x) -> np.ndarray:
        x = self._check(x)
        return np.clip(self._proba(x), 0.0, 1.0)

    def predict_label(self, x, threshold: float = THRESHOLD) -> np.ndarray:
        return predict_label(self.predict_proba(x), threshold)

    def input_gradient(self, x, y) -> np.ndarray:
        raise NotDifferentiable(f"{self.family} models expose no input gradient")

    def _check(self, x) -> np.ndarray:
        x = as_matrix(x, "x")
        if x.shape[1] != self.n_features:
            raise ShapeError(f"{self.family}: expected {self.n_features} features, got {x.shape[1]}")
        return x

    def _proba(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hyperparameters(self) -> dict:
        return {}

    def parameters_dict(self) -> dict:
        raise NotImplementedError


def predict_label(proba, threshold: float = THRESHOLD) -> np.ndarray:
    """``1[proba > threshold]``; an exact tie goes to class 0."""
    return (np.asarray(proba) > threshold).astype(np.int64)


def check_binary_train(y: np.ndarray) -> None:
    y = np.asarray(y)
    if y.size == 0 or not np.any(y == 1) or not np.any(y == 0):
        raise TrainingError("training split must contain both classes")
