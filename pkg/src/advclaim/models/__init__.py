"""Detector families behind one classifier contract, plus JSON persistence."""
from __future__ import annotations

import json
import logging
import warnings
from pathlib import Path

from .base import Classifier, NotDifferentiable, TrainingError, predict_label
from .knn import ConfigurationError, KnnModel, train_knn
from .margin import MarginModel, train_margin
from .recurrent import BiRecurrentModel, train_birecurrent
from .trees import TreeEnsemble, train_gbt

log = logging.getLogger(__name__)

MODEL_FORMAT = "advclaim-model/1"
FAMILIES = {
    "birecurrent": BiRecurrentModel,
    "gbt": TreeEnsemble,
    "knn": KnnModel,
    "margin": MarginModel,
}

__all__ = [
    "Classifier", "NotDifferentiable", "TrainingError", "ConfigurationError", "predict_label",
    "BiRecurrentModel", "TreeEnsemble", "KnnModel", "MarginModel",
    "train_birecurrent", "train_gbt", "train_knn", "train_margin",
    "fit_on_dataset", "save_model", "load_model", "HashMismatch",
]


class HashMismatch(ValueError):
    """A model was trained on a different dataset snapshot."""


def fit_on_dataset(kind: str, dataset, seed: int = 0, **hyper) -> Classifier:
    """Train a model on the dataset's train split.

    ``kind`` is one of ``birecurrent``, ``gbt_level``, ``gbt_leaf``, ``knn``,
    ``margin``; the two boosted variants differ only in their growth policy.
    """
    x, y = dataset.train
    if kind == "birecurrent":
        return train_birecurrent(x, y, seed=seed, **hyper)
    if kind in ("gbt_level", "gbt_leaf"):
        hyper.setdefault("growth", "level_wise" if kind == "gbt_level" else "leaf_wise")
        return train_gbt(x, y, **hyper)
    if kind == "knn":
        return train_knn(x, y, **hyper)
    if kind == "margin":
        return train_margin(x, y, seed=seed, **hyper)
    raise ValueError(f"unknown model kind {kind!r}")


def model_document(model: Classifier, dataset_hash: str | None = None, seed: int | None = None,
                   name: str | None = None, extra: dict | None = None) -> dict:
    doc = {
        "format": MODEL_FORMAT,
        "family": model.family,
        "name": name or model.family,
        "hyperparameters": model.hyperparameters(),
        "parameters": model.parameters_dict(),
        "seed": seed,
        "dataset_hash": dataset_hash,
    }
    if extra:
        doc.update(extra)
    return doc


def save_model(model: Classifier, path: str | Path, dataset_hash: str | None = None,
               seed: int | None = None, name: str | None = None, extra: dict | None = None) -> None:
    doc = model_document(model, dataset_hash, seed, name, extra)
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_model(path: str | Path, expected_hash: str | None = None, allow_mismatch: bool = False
               ) -> tuple[Classifier, dict]:
    """Load a model document; returns the model and its metadata.

    A dataset-hash mismatch raises :class:`HashMismatch`, or only warns when
    ``allow_mismatch`` is set (the metadata then carries ``hash_mismatch``).
    """
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a model document")
    meta = {k: v for k, v in doc.items() if k != "parameters"}
    meta["hash_mismatch"] = False
    if expected_hash is not None and doc.get("dataset_hash") != expected_hash:
        msg = f"{path}: trained on dataset {doc.get('dataset_hash')}, expected {expected_hash}"
        if not allow_mismatch:
            raise HashMismatch(msg)
        warnings.warn(msg)
        meta["hash_mismatch"] = True
    cls = FAMILIES[doc["family"]]
    return cls.from_parts(doc["hyperparameters"], doc["parameters"]), meta
