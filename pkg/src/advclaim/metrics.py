"""Confusion counts, accuracy, F1, attack success rate and report files.

Rates are computed as exact fractions and converted to float at the end, so
identities such as ``accuracy + error_rate == 1`` hold exactly.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NA = "n/a"
ASR_MODES = ("sample_rate", "batch_all")


class UndefinedMetric(ValueError):
    """The metric's denominator is zero for these counts."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _binary(v, name) -> np.ndarray:
    arr = np.asarray(v)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must contain only 0 and 1")
    return arr.astype(np.int64)


def confusion(labels, preds) -> ConfusionCounts:
    """Counts with fraud (1) as the positive class."""
    y = _binary(labels, "labels")
    p = _binary(preds, "preds")
    if y.shape != p.shape:
        raise ValueError(f"labels has {y.size} entries but preds has {p.size}")
    return ConfusionCounts(
        tp=int(np.sum((y == 1) & (p == 1))),
        fp=int(np.sum((y == 0) & (p == 1))),
        tn=int(np.sum((y == 0) & (p == 0))),
        fn=int(np.sum((y == 1) & (p == 0))),
    )


def accuracy_exact(c: ConfusionCounts) -> Fraction:
    if c.total == 0:
        raise UndefinedMetric("accuracy of an empty evaluation")
    return Fraction(c.tp + c.tn, c.total)


def error_rate_exact(c: ConfusionCounts) -> Fraction:
    if c.total == 0:
        raise UndefinedMetric("error rate of an empty evaluation")
    return Fraction(c.fp + c.fn, c.total)


def f1_exact(c: ConfusionCounts) -> Fraction:
    denom = 2 * c.tp + c.fp + c.fn
    if denom == 0:
        raise UndefinedMetric("F1 undefined: no positive labels or predictions")
    return Fraction(2 * c.tp, denom)


def accuracy(c: ConfusionCounts) -> float:
    """(TP + TN) / (TP + FP + TN + FN)."""
    return float(accuracy_exact(c))


def f1(c: ConfusionCounts) -> float:
    """2 TP / (2 TP + FP + FN); raises :class:`UndefinedMetric` when the denominator is 0."""
    return float(f1_exact(c))


def f1_or_na(c: ConfusionCounts):
    try:
        return f1(c)
    except UndefinedMetric:
        return NA


def asr_exact(batch_results: Sequence[Iterable[int]], mode: str = "sample_rate", target_label: int = 0) -> Fraction:
    """Attack success rate over batches of predicted labels.

    ``sample_rate``: fraction of all generated samples predicted as the target
    label. ``batch_all``: fraction of batches in which every sample is.
    """
    if mode not in ASR_MODES:
        raise ValueError(f"mode must be one of {ASR_MODES}, got {mode!r}")
    batches = [np.asarray(list(b)) for b in batch_results]
    if not batches:
        raise UndefinedMetric("ASR over zero batches")
    if mode == "sample_rate":
        n = sum(b.size for b in batches)
        if n == 0:
            raise UndefinedMetric("ASR over zero samples")
        return Fraction(int(sum(np.sum(b == target_label) for b in batches)), n)
    return Fraction(sum(1 for b in batches if b.size and np.all(b == target_label)), len(batches))


def asr(batch_results, mode: str = "sample_rate", target_label: int = 0) -> float:
    return float(asr_exact(batch_results, mode, target_label))


def evaluate(labels, preds) -> dict:
    c = confusion(labels, preds)
    return {"accuracy": accuracy(c), "f1": f1_or_na(c), "confusion": asdict(c)}


@dataclass
class MetricsReport:
    """One experiment's results; serialized with sorted keys for byte-stable output."""

    kind: str
    dataset_hash: str | None = None
    config_hash: str | None = None
    seeds: dict = field(default_factory=dict)
    model_rows: list[dict] = field(default_factory=list)
    attack_rows: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    timestamp: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return NA if v is None else v


def emit_report(report: MetricsReport, json_path: str | Path, csv_path: str | Path | None = None) -> MetricsReport:
    """Write the report as JSON (and its table rows as CSV); identical input gives identical bytes."""
    for row in report.model_rows + report.attack_rows:
        for key in ("accuracy", "f1", "accuracy_after", "asr"):
            v = row.get(key)
            if isinstance(v, float) and not 0.0 <= v <= 1.0:
                raise ValueError(f"rate {key}={v} outside [0, 1] in row {row}")
    Path(json_path).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    if csv_path is not None:
        rows = report.model_rows or report.attack_rows
        cols = sorted({k for r in rows for k in r if not isinstance(r[k], (dict, list))})
        with Path(csv_path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in rows:
                w.writerow([_fmt(r.get(c)) for c in cols])
    return report
