"""Claims ingestion, encoding, normalization, splitting and synthetic data."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .numkit import Rng

log = logging.getLogger(__name__)

DEFAULT_LABEL_COLUMN = "fraud_reported"
DEFAULT_RATIOS = (0.75, 0.05, 0.20)
UNKNOWN = "<unknown>"
SNAPSHOT_FORMAT = "advclaim-dataset/1"
# per-coordinate cluster spread of the synthetic generator, in feature units
SYNTH_CLUSTER_STD = 0.1

_POSITIVE = {"1", "y", "yes", "true", "t", "fraud"}
_NEGATIVE = {"0", "n", "no", "false", "f", "legit", "legitimate"}
_MISSING = {"", "?", "na", "nan", "null", "none"}


class IngestionError(ValueError):
    """Raised for unreadable or malformed input files."""


class SchemaError(ValueError):
    """Raised when a column cannot be encoded."""


@dataclass
class RawTable:
    """Parsed CSV: feature columns, their string cells (``None`` = missing) and labels."""

    columns: list[str]
    rows: list[list[str | None]]
    labels: np.ndarray
    source: str = ""

    def column(self, j: int) -> list[str | None]:
        return [r[j] for r in self.rows]


@dataclass
class FeatureMeta:
    name: str
    kind: str  # "numeric" | "categorical"
    categories: list[str] = field(default_factory=list)
    min: float | None = None
    max: float | None = None
    median: float | None = None

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and len(set(self.categories)) != len(self.categories):
            raise SchemaError(f"feature {self.name!r}: duplicate categories")
        if self.kind == "numeric" and self.min is not None and self.max is not None and self.min > self.max:
            raise SchemaError(f"feature {self.name!r}: min {self.min} > max {self.max}")

    @property
    def unknown_code(self) -> int:
        return len(self.categories)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "categories": list(self.categories),
            "min": self.min,
            "max": self.max,
            "median": self.median,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureMeta":
        return cls(**d)


@dataclass
class Dataset:
    """Normalized feature matrix with labels, schema and split indices."""

    features: np.ndarray
    labels: np.ndarray
    meta: list[FeatureMeta]
    split: dict[str, np.ndarray]
    seed: int = 0
    source: str = ""
    report: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def feature_names(self) -> list[str]:
        return [m.name for m in self.meta]

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.split[name]
        return self.features[idx], self.labels[idx]

    @property
    def train(self):
        return self.part("train")

    @property
    def val(self):
        return self.part("val")

    @property
    def test(self):
        return self.part("test")

    def to_dict(self) -> dict:
        return {
            "format": SNAPSHOT_FORMAT,
            "seed": int(self.seed),
            "source": self.source,
            "shape": list(self.features.shape),
            "schema": [m.to_dict() for m in self.meta],
            "split": {k: [int(i) for i in v] for k, v in sorted(self.split.items())},
            "report": self.report,
            "labels": [int(v) for v in self.labels],
            "features": [[float(v) for v in row] for row in self.features],
        }

    def content_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()

    def save(self, path: str | Path, extra: Mapping | None = None) -> str:
        """Write a self-describing JSON snapshot; returns its content hash."""
        doc = self.to_dict()
        digest = self.content_hash()
        doc["hash"] = digest
        if extra:
            doc.update(extra)
        Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")
        return digest

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise IngestionError(f"snapshot not found: {path}") from None
        if doc.get("format") != SNAPSHOT_FORMAT:
            raise IngestionError(f"{path}: not a dataset snapshot (format={doc.get('format')!r})")
        ds = cls(
            features=np.asarray(doc["features"], dtype=np.float64).reshape(doc["shape"]),
            labels=np.asarray(doc["labels"], dtype=np.int64),
            meta=[FeatureMeta.from_dict(m) for m in doc["schema"]],
            split={k: np.asarray(v, dtype=np.int64) for k, v in doc["split"].items()},
            seed=doc["seed"],
            source=doc["source"],
            report=doc["report"],
        )
        if doc.get("hash") and ds.content_hash() != doc["hash"]:
            raise IngestionError(f"{path}: snapshot hash does not match its content")
        return ds


def _parse_label(value: str | None, row_no: int) -> int:
    v = (value or "").strip().lower()
    if v in _POSITIVE:
        return 1
    if v in _NEGATIVE:
        return 0
    raise IngestionError(f"row {row_no}: unrecognized label {value!r}")


def load_csv(path: str | Path, label_column: str = DEFAULT_LABEL_COLUMN,
             drop_columns: Iterable[str] = ()) -> RawTable:
    """Read a comma-separated UTF-8 file with a header row.

    Row numbers in error messages are 1-based file lines (the header is line 1).
    Cells that are empty or hold a common missing marker (``?``, ``NA``...) are
    stored as ``None``.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"file not found: {path}")
    drop = set(drop_columns)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        if label_column not in header:
            raise IngestionError(f"{path}: label column {label_column!r} not in header")
        label_j = header.index(label_column)
        keep = [j for j, h in enumerate(header) if j != label_j and h not in drop]
        rows, labels = [], []
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise IngestionError(
                    f"{path}: row {line_no} has {len(rec)} fields, header has {len(header)}"
                )
            labels.append(_parse_label(rec[label_j], line_no))
            rows.append([None if rec[j].strip().lower() in _MISSING else rec[j].strip() for j in keep])
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    return RawTable([header[j] for j in keep], rows, np.asarray(labels, dtype=np.int64), str(path))


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def infer_kinds(raw: RawTable) -> dict[str, str]:
    """Numeric when every present cell parses as a float, categorical otherwise."""
    kinds = {}
    for j, name in enumerate(raw.columns):
        cells = [c for c in raw.column(j) if c is not None]
        kinds[name] = "numeric" if cells and all(_is_number(c) for c in cells) else "categorical"
    return kinds


def fit_encoding(raw: RawTable, kinds: Mapping[str, str] | None = None,
                 fit_rows: Sequence[int] | None = None) -> list[FeatureMeta]:
    """Fit per-column schemas on ``fit_rows`` (all rows by default).

    Categories are sorted lexicographically; numeric min, max and median come
    from the fit rows only.
    """
    declared = infer_kinds(raw) if kinds is None else {**infer_kinds(raw), **kinds}
    rows = range(len(raw.rows)) if fit_rows is None else fit_rows
    metas = []
    for j, name in enumerate(raw.columns):
        cells = [raw.rows[i][j] for i in rows if raw.rows[i][j] is not None]
        if not cells:
            raise SchemaError(f"column {name!r} has no values in the fit rows")
        kind = declared[name]
        if kind == "categorical":
            metas.append(FeatureMeta(name, kind, categories=sorted(set(cells))))
        else:
            try:
                vals = np.asarray([float(c) for c in cells])
            except ValueError as exc:
                raise SchemaError(f"column {name!r} declared numeric: {exc}") from None
            metas.append(FeatureMeta(name, "numeric", min=float(vals.min()), max=float(vals.max()),
                                     median=float(np.median(vals))))
    return metas


def encode(raw: RawTable, meta: Sequence[FeatureMeta]) -> tuple[np.ndarray, dict]:
    """Map cells to raw numeric values (category codes, imputed numerics).

    Unseen categories and missing categoricals get the reserved unknown code;
    missing numerics get the fit median. Counts of both land in the report.
    """
    if [m.name for m in meta] != raw.columns:
        raise SchemaError("schema columns do not match table columns")
    out = np.zeros((len(raw.rows), len(meta)))
    unknown: dict[str, int] = {}
    imputed: dict[str, int] = {}
    for j, m in enumerate(meta):
        if m.kind == "categorical":
            codes = {c: k for k, c in enumerate(m.categories)}
            for i, row in enumerate(raw.rows):
                code = codes.get(row[j])
                if code is None:
                    code = m.unknown_code
                    unknown[m.name] = unknown.get(m.name, 0) + 1
                out[i, j] = code
        else:
            for i, row in enumerate(raw.rows):
                if row[j] is None:
                    out[i, j] = m.median
                    imputed[m.name] = imputed.get(m.name, 0) + 1
                else:
                    out[i, j] = float(row[j])
    return out, {"unknown_categories": unknown, "imputed_numeric": imputed}


def _scale_bounds(m: FeatureMeta) -> tuple[float, float]:
    if m.kind == "categorical":
        # top code is the reserved unknown slot
        return 0.0, float(m.unknown_code)
    return float(m.min), float(m.max)


def normalize(values: np.ndarray, meta: Sequence[FeatureMeta]) -> np.ndarray:
    """Min-max scale each column to [0, 1]; constant columns map to 0, overflow is clipped."""
    out = np.zeros_like(values, dtype=np.float64)
    for j, m in enumerate(meta):
        lo, hi = _scale_bounds(m)
        if hi > lo:
            out[:, j] = (values[:, j] - lo) / (hi - lo)
    return np.clip(out, 0.0, 1.0)


def decode_rows(features: np.ndarray, meta: Sequence[FeatureMeta]) -> list[dict[str, object]]:
    """Invert normalization and encoding into claim-record dictionaries."""
    records = []
    for row in np.atleast_2d(features):
        rec: dict[str, object] = {}
        for v, m in zip(row, meta):
            lo, hi = _scale_bounds(m)
            raw = lo + float(v) * (hi - lo)
            if m.kind == "categorical":
                code = int(np.clip(round(raw), 0, m.unknown_code))
                rec[m.name] = m.categories[code] if code < len(m.categories) else UNKNOWN
            else:
                rec[m.name] = raw
        records.append(rec)
    return records


def _allocate(counts: np.ndarray, total: int) -> np.ndarray:
    """Split ``total`` across classes in proportion to ``counts`` (largest remainder)."""
    n = counts.sum()
    if total == 0 or n == 0:
        return np.zeros_like(counts)
    quota = total * counts / n
    alloc = np.floor(quota).astype(np.int64)
    rest = total - alloc.sum()
    order = np.argsort(-(quota - alloc), kind="stable")
    for c in order[:rest]:
        alloc[c] += 1
    return np.minimum(alloc, counts)


def split_indices(labels: np.ndarray, ratios: Sequence[float] = DEFAULT_RATIOS,
                  seed: int = 0) -> tuple[dict[str, np.ndarray], list[str]]:
    """Stratified train/val/test indices plus any stratification warnings.

    Val and test sizes are ``floor(ratio * n)``; train receives the remainder.
    Within each split, class counts follow the overall class proportions.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative values summing to 1, got {ratios}")
    labels = np.asarray(labels)
    n = labels.size
    n_val = int(np.floor(ratios[1] * n + 1e-9))
    n_test = int(np.floor(ratios[2] * n + 1e-9))
    classes = np.array([0, 1])
    counts = np.array([(labels == c).sum() for c in classes])
    test_c = _allocate(counts, n_test)
    val_c = _allocate(counts - test_c, n_val) if n_val else np.zeros_like(counts)
    rng = Rng(seed)
    parts: dict[str, list[int]] = {"train": [], "val": [], "test": []}
    for c, nt, nv in zip(classes, test_c, val_c):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        parts["test"].extend(idx[:nt])
        parts["val"].extend(idx[nt:nt + nv])
        parts["train"].extend(idx[nt + nv:])
    split = {k: np.sort(np.asarray(v, dtype=np.int64)) for k, v in parts.items()}
    warnings = []
    for name, idx in split.items():
        for c in classes:
            if not np.any(labels[idx] == c):
                warnings.append(f"split {name!r} has no samples of class {c}")
    for w in warnings:
        log.warning(w)
    return split, warnings


def build_dataset(raw: RawTable, kinds: Mapping[str, str] | None = None,
                  ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0) -> Dataset:
    """Split, fit the schema on train rows, then encode and normalize every row."""
    split, warnings = split_indices(raw.labels, ratios, seed)
    meta = fit_encoding(raw, kinds, fit_rows=split["train"])
    values, enc_report = encode(raw, meta)
    return Dataset(
        features=normalize(values, meta),
        labels=raw.labels.copy(),
        meta=meta,
        split=split,
        seed=seed,
        source=raw.source,
        report={"split_warnings": warnings, **enc_report},
    )


def split(dataset: Dataset, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0) -> Dataset:
    """Return a copy of ``dataset`` with freshly drawn stratified split indices."""
    idx, warnings = split_indices(dataset.labels, ratios, seed)
    report = {**dataset.report, "split_warnings": warnings}
    return Dataset(dataset.features, dataset.labels, dataset.meta, idx, seed, dataset.source, report)


@dataclass
class SynthConfig:
    """Two-cluster synthetic claims.

    ``class_separation`` is the per-coordinate gap between the class centers in
    units of the cluster standard deviation; the centers differ along a random
    sign direction over the first ``informative`` coordinates (all by default).
    """

    n_samples: int = 1000
    n_features: int = 12
    class_separation: float = 2.0
    fraud_fraction: float = 0.25
    seed: int = 7
    informative: int | None = None

    def __post_init__(self):
        if self.n_samples < 10:
            raise ValueError("n_samples must be at least 10")
        if self.n_features < 2:
            raise ValueError("n_features must be at least 2")
        if self.class_separation < 0:
            raise ValueError("class_separation must be non-negative")
        if not 0 < self.fraud_fraction < 1:
            raise ValueError("fraud_fraction must lie in (0, 1)")


def synth_raw(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized synthetic matrix and labels, clipped to [0, 1]."""
    rng = Rng(cfg.seed)
    n, f = cfg.n_samples, cfg.n_features
    k = f if cfg.informative is None else cfg.informative
    direction = np.zeros(f)
    direction[:k] = np.where(rng.uniform(k) < 0.5, -1.0, 1.0)
    n_fraud = int(round(cfg.fraud_fraction * n))
    labels = np.zeros(n, dtype=np.int64)
    labels[rng.permutation(n)[:n_fraud]] = 1
    half_gap = 0.5 * cfg.class_separation * SYNTH_CLUSTER_STD
    centers = 0.5 + np.where(labels[:, None] == 1, half_gap, -half_gap) * direction
    x = centers + rng.normal((n, f), 0.0, SYNTH_CLUSTER_STD)
    return np.clip(x, 0.0, 1.0), labels


def synth_generate(cfg: SynthConfig, ratios: Sequence[float] = DEFAULT_RATIOS) -> Dataset:
    """Synthetic dataset run through the same split and train-fitted scaling as CSV data."""
    x, labels = synth_raw(cfg)
    idx, warnings = split_indices(labels, ratios, cfg.seed)
    train = x[idx["train"]]
    meta = [
        FeatureMeta(f"f{j}", "numeric", min=float(train[:, j].min()), max=float(train[:, j].max()),
                    median=float(np.median(train[:, j])))
        for j in range(cfg.n_features)
    ]
    return Dataset(
        features=normalize(x, meta),
        labels=labels,
        meta=meta,
        split=idx,
        seed=cfg.seed,
        source=f"synth:n={cfg.n_samples},f={cfg.n_features},sep={cfg.class_separation},"
               f"fraud={cfg.fraud_fraction},informative={cfg.informative}",
        report={"split_warnings": warnings},
    )
